//! `muxfuse` command-line entry point.

mod grid;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use muxfuse::graph::{add_layer_to_dataset, build_knn_layer, load_dataset, ZeroNormPolicy};
use muxfuse::pipeline::{self, RunConfig};

/// Environment variable overriding the config seed (a `--seed` flag wins).
const SEED_ENV: &str = "MUXFUSE_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "muxfuse",
    version,
    about = "Multiplex graph representation learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add a cosine KNN layer to a dataset directory.
    Prepare {
        dataset: PathBuf,
        /// Neighbours per node.
        #[arg(long)]
        knn: usize,
        /// Output directory (defaults to updating the dataset in place).
        #[arg(long)]
        out: Option<PathBuf>,
        /// How all-zero feature rows are handled.
        #[arg(long, value_enum, default_value_t = ZeroNorm::Reject)]
        zero_norm: ZeroNorm,
    },
    /// Train and evaluate one configuration.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run every cell of a grid file and aggregate over seeds.
    Grid {
        grid: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rerun cells whose report already exists with the same config hash.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ZeroNorm {
    /// Fail, naming the node.
    Reject,
    /// Treat the row as similar to nothing; ties fall back to index order.
    Zero,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Prepare {
            dataset,
            knn,
            out,
            zero_norm,
        } => prepare(&dataset, knn, out.as_deref(), zero_norm),
        Command::Run { config, seed, out } => run(&config, seed, &out),
        Command::Grid {
            grid,
            parallel,
            out,
            force,
        } => grid::run_grid(&grid, parallel, out.as_deref(), force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for out-of-scope methods, 3 for numeric failures, 1 otherwise.
pub(crate) fn exit_code(err: &anyhow::Error) -> u8 {
    use muxfuse::Error as E;
    match err.chain().find_map(|c| c.downcast_ref::<E>()) {
        Some(E::OutOfScope { .. }) => 2,
        Some(E::NonFinite { .. } | E::Divergence { .. } | E::ZeroVariance { .. }) => 3,
        _ => 1,
    }
}

fn prepare(dataset: &Path, k: usize, out: Option<&Path>, zero_norm: ZeroNorm) -> Result<()> {
    let g = load_dataset(dataset)?;
    let policy = match zero_norm {
        ZeroNorm::Reject => ZeroNormPolicy::Reject,
        ZeroNorm::Zero => ZeroNormPolicy::ZeroSimilarity,
    };
    let layer = build_knn_layer(&g, k, policy)?;
    let dst = out.unwrap_or(dataset);
    add_layer_to_dataset(dataset, dst, &layer)?;
    println!(
        "{}: wrote {} KNN edges (k={k}) to {}",
        g.name(),
        layer.len(),
        dst.display()
    );
    Ok(())
}

/// Flag, then environment, then the config file.
fn resolve_seed(flag: Option<u64>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not a seed")),
        Err(std::env::VarError::NotPresent) => Ok(config),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

fn run(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg =
        RunConfig::from_toml_str(&text).with_context(|| format!("in {}", config.display()))?;
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    let result = pipeline::run(&cfg)?;
    let stem = output::run_stem(&cfg, None);
    let (json, csv) = output::write_run(out, &stem, &result.report)?;
    for row in result.report.summary_rows() {
        println!("{}", output::describe(&row));
    }
    println!("report: {}\nrow:    {}", json.display(), csv.display());
    Ok(())
}
