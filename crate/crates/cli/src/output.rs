use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use muxfuse::graph::write_atomic;
use muxfuse::pipeline::{RunConfig, RunReport, SummaryRow};

/// `<dataset>_<method>_seed<seed>`, plus a hash prefix when given.
pub fn run_stem(cfg: &RunConfig, hash: Option<&str>) -> String {
    let dataset = cfg
        .dataset
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut stem = format!("{dataset}_{}_seed{}", cfg.method, cfg.seed);
    if let Some(h) = hash {
        stem.push('_');
        stem.push_str(&h[..12]);
    }
    stem
}

pub fn csv_bytes<T: serde::Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing csv")
}

/// Writes `<stem>.json` and `<stem>.csv` atomically.
pub fn write_run(dir: &Path, stem: &str, report: &RunReport) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    write_atomic(
        &json,
        (serde_json::to_string_pretty(report)? + "\n").as_bytes(),
    )?;
    write_atomic(&csv, &csv_bytes(&report.summary_rows())?)?;
    Ok((json, csv))
}

pub fn describe(row: &SummaryRow) -> String {
    let pair = |m: Option<f64>, s: Option<f64>| match (m, s) {
        (Some(m), Some(s)) => format!("{m:.4} ({s:.4})"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "-".to_string(),
    };
    format!(
        "{} {} seed {}: MaF1 {}  NMI {}  Sim@5 {}  [{:.1}s]",
        row.dataset,
        row.method,
        row.seed,
        pair(row.maf1, row.maf1_std),
        pair(row.nmi, row.nmi_std),
        pair(row.sim5, None),
        row.wall_s
    )
}
