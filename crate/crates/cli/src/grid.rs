//! Grid files: a table of shared defaults, a list of cells, and seeds.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! out = "results/grid"
//!
//! [defaults]
//! dataset = "data/cora"
//!
//! [[cells]]
//! method = "emb-mean"
//!
//! [[cells]]
//! method = "vote-soft"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use muxfuse::eval::MeanStd;
use muxfuse::graph::write_atomic;
use muxfuse::pipeline::{self, RunConfig, RunReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    seeds: Vec<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    defaults: toml::Table,
    #[serde(default)]
    cells: Vec<toml::Table>,
}

/// Expanded grid: one config per (cell, seed).
#[derive(Debug)]
pub struct GridSpec {
    pub runs: Vec<RunConfig>,
    pub out: Option<PathBuf>,
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let file: GridFile = toml::from_str(text)?;
        let distinct: BTreeSet<u64> = file.seeds.iter().copied().collect();
        if distinct.len() != file.seeds.len() {
            bail!("grid seeds must be distinct");
        }
        let mut runs = Vec::new();
        for (i, cell) in file.cells.iter().enumerate() {
            let mut table = file.defaults.clone();
            table.extend(cell.clone());
            let template: RunConfig = table.try_into().with_context(|| format!("cell {i}"))?;
            template
                .validate()
                .with_context(|| format!("cell {i} ({})", template.method))?;
            if file.seeds.is_empty() {
                runs.push(template);
            } else {
                for &seed in &file.seeds {
                    runs.push(RunConfig {
                        seed,
                        ..template.clone()
                    });
                }
            }
        }
        if runs.is_empty() {
            bail!("no cells");
        }
        Ok(GridSpec {
            runs,
            out: file.out,
        })
    }
}

#[derive(Debug, Serialize)]
struct Failure {
    dataset: PathBuf,
    method: String,
    seed: u64,
    config_hash: String,
    exit_code: u8,
    error: String,
}

enum Outcome {
    Done {
        report: Box<RunReport>,
        reused: bool,
    },
    Failed(Failure),
}

fn run_cell(cfg: &RunConfig, runs_dir: &Path, force: bool) -> Outcome {
    let hash = cfg.hash();
    let stem = output::run_stem(cfg, Some(&hash));
    let path = runs_dir.join(format!("{stem}.json"));
    if !force {
        if let Some(report) = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunReport>(&t).ok())
            .filter(|r| r.config_hash == hash)
        {
            return Outcome::Done {
                report: Box::new(report),
                reused: true,
            };
        }
    }
    let result = pipeline::run(cfg)
        .map_err(anyhow::Error::from)
        .and_then(|out| output::write_run(runs_dir, &stem, &out.report).map(|_| out.report));
    match result {
        Ok(report) => Outcome::Done {
            report: Box::new(report),
            reused: false,
        },
        Err(e) => Outcome::Failed(Failure {
            dataset: cfg.dataset.clone(),
            method: cfg.method.clone(),
            seed: cfg.seed,
            config_hash: hash,
            exit_code: crate::exit_code(&e),
            error: format!("{e:#}"),
        }),
    }
}

pub fn run_grid(grid: &Path, parallel: usize, out: Option<&Path>, force: bool) -> Result<()> {
    let text =
        std::fs::read_to_string(grid).with_context(|| format!("reading {}", grid.display()))?;
    let spec = GridSpec::parse(&text).with_context(|| format!("in {}", grid.display()))?;
    let out = out
        .map(Path::to_path_buf)
        .or(spec.out.clone())
        .unwrap_or_else(|| PathBuf::from("results/grid"));
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir)
        .with_context(|| format!("creating {}", runs_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .context("building worker pool")?;
    let total = spec.runs.len();
    let start = Instant::now();
    let outcomes: Vec<Outcome> = pool.install(|| {
        spec.runs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let outcome = run_cell(cfg, &runs_dir, force);
                let status = match &outcome {
                    Outcome::Done { reused: true, .. } => "skipped (same config hash)".to_string(),
                    Outcome::Done { report, .. } => format!("done in {:.1}s", report.wall_time_s),
                    Outcome::Failed(f) => format!("FAILED: {}", f.error),
                };
                eprintln!(
                    "[{}/{total}] {} seed {}: {status}",
                    i + 1,
                    cfg.method,
                    cfg.seed
                );
                outcome
            })
            .collect()
    });

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Done { report, .. } => reports.push(*report),
            Outcome::Failed(f) => failures.push(f),
        }
    }
    let rows: Vec<_> = reports.iter().flat_map(RunReport::summary_rows).collect();
    write_atomic(&out.join("runs.csv"), &output::csv_bytes(&rows)?)?;
    let table = aggregate(&reports);
    write_atomic(&out.join("aggregate.csv"), &output::csv_bytes(&table)?)?;
    write_atomic(
        &out.join("table.md"),
        markdown(&table, &failures).as_bytes(),
    )?;
    write_atomic(
        &out.join("failures.json"),
        (serde_json::to_string_pretty(&failures)? + "\n").as_bytes(),
    )?;
    eprintln!(
        "{} of {total} cells succeeded in {:.1}s; tables in {}",
        total - failures.len(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    if !failures.is_empty() {
        eprintln!(
            "warning: {} cells failed; see failures.json",
            failures.len()
        );
    }
    Ok(())
}

/// Mean and std across seeds of one metric of one (dataset, method, variant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    /// Hash prefix of the config with the seed cleared.
    pub variant: String,
    pub seeds: usize,
    pub maf1: Option<f64>,
    pub maf1_std: Option<f64>,
    pub nmi: Option<f64>,
    pub nmi_std: Option<f64>,
    pub sim5: Option<f64>,
    pub sim5_std: Option<f64>,
    pub val_maf1: Option<f64>,
    /// Highest validation Macro-F1 among variants of this dataset and method.
    pub selected: bool,
}

fn variant_of(cfg: &RunConfig) -> String {
    let base = RunConfig {
        seed: 0,
        ..cfg.clone()
    };
    base.hash()[..8].to_string()
}

fn across_seeds(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() || present.len() != values.len() {
        return (None, None);
    }
    let ms = MeanStd::of(&present);
    (Some(ms.mean), Some(ms.std))
}

/// Groups summary rows by dataset, method and variant; averages per-seed
/// means, with the population std across seeds.
pub fn aggregate(reports: &[RunReport]) -> Vec<AggregateRow> {
    type Key = (String, String, String);
    let mut groups: BTreeMap<Key, Vec<(muxfuse::pipeline::SummaryRow, Option<f64>)>> =
        BTreeMap::new();
    for r in reports {
        let variant = variant_of(&r.config);
        let vals: Vec<Option<f64>> = match &r.metrics {
            Some(m) => vec![m.val_macro_f1.map(|v| v.mean)],
            None => r
                .per_layer
                .iter()
                .map(|l| l.metrics.val_macro_f1.map(|v| v.mean))
                .collect(),
        };
        for (row, val) in r.summary_rows().into_iter().zip(vals) {
            groups
                .entry((row.dataset.clone(), row.method.clone(), variant.clone()))
                .or_default()
                .push((row, val));
        }
    }
    let mut out: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((dataset, method, variant), rows)| {
            let col = |f: fn(&muxfuse::pipeline::SummaryRow) -> Option<f64>| {
                across_seeds(&rows.iter().map(|(r, _)| f(r)).collect::<Vec<_>>())
            };
            let (maf1, maf1_std) = col(|r| r.maf1);
            let (nmi, nmi_std) = col(|r| r.nmi);
            let (sim5, sim5_std) = col(|r| r.sim5);
            let (val_maf1, _) = across_seeds(&rows.iter().map(|(_, v)| *v).collect::<Vec<_>>());
            AggregateRow {
                dataset,
                method,
                variant,
                seeds: rows.len(),
                maf1,
                maf1_std,
                nmi,
                nmi_std,
                sim5,
                sim5_std,
                val_maf1,
                selected: false,
            }
        })
        .collect();
    let mut best: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, row) in out.iter().enumerate() {
        let key = (row.dataset.clone(), row.method.clone());
        let score = |r: &AggregateRow| r.val_maf1.unwrap_or(f64::NEG_INFINITY);
        match best.get(&key) {
            Some(&j) if score(&out[j]) >= score(row) => {}
            _ => {
                best.insert(key, i);
            }
        }
    }
    for &i in best.values() {
        out[i].selected = true;
    }
    out
}

fn cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{:.2} ({:.2})", 100.0 * m, 100.0 * s),
        _ => "–".to_string(),
    }
}

/// One row per method, Clf/Clu/Sim columns per dataset, selected variants only.
fn markdown(rows: &[AggregateRow], failures: &[Failure]) -> String {
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut s = String::from("| Method |");
    let mut rule = String::from("|---|");
    for d in &datasets {
        write!(s, " {d} Clf | {d} Clu | {d} Sim |").unwrap();
        rule.push_str("---|---|---|");
    }
    s.push('\n');
    s.push_str(&rule);
    s.push('\n');
    for m in methods {
        write!(s, "| {m} |").unwrap();
        for d in &datasets {
            match rows
                .iter()
                .find(|r| r.selected && r.method == m && r.dataset == *d)
            {
                Some(r) => write!(
                    s,
                    " {} | {} | {} |",
                    cell(r.maf1, r.maf1_std),
                    cell(r.nmi, r.nmi_std),
                    cell(r.sim5, r.sim5_std)
                )
                .unwrap(),
                None => s.push_str(" – | – | – |"),
            }
        }
        s.push('\n');
    }
    s.push_str(
        "\nValues are mean (std) × 100 across seeds; Clf = Macro-F1, Clu = NMI, Sim = Sim@5.\n",
    );
    if !failures.is_empty() {
        s.push_str("\nFailed cells:\n\n");
        for f in failures {
            writeln!(
                s,
                "- {} seed {} ({}): {}",
                f.method,
                f.seed,
                f.dataset.display(),
                f.error
            )
            .unwrap();
        }
    }
    s
}
