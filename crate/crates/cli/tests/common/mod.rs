#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use muxfuse::graph::synthetic::PlantedSbm;
use muxfuse::graph::write_dataset;

pub fn muxfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muxfuse"))
        .args(args)
        .env_remove("MUXFUSE_SEED")
        .output()
        .expect("spawning muxfuse")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small planted two-layer dataset written to `<dir>/planted`.
pub fn planted_dataset(dir: &Path) -> PathBuf {
    let g = PlantedSbm {
        nodes: 60,
        p_in: 0.25,
        p_out: 0.02,
        p_noise: 0.08,
        feature_dim: 12,
        feature_signal: 1.0,
        ..PlantedSbm::default()
    }
    .generate(3)
    .unwrap();
    let path = dir.join("planted");
    write_dataset(&g, &path).unwrap();
    path
}

/// Keys shared by every quick run.
pub fn quick_keys(dataset: &Path) -> String {
    format!(
        "dataset = {:?}\nd = 8\nepochs = 15\npatience = 15\nfuser_epochs = 15\natt_dim = 8\n\
         classifier_seeds = 2\nkmeans_seeds = 2\nlogreg_steps = 40\n",
        dataset.display().to_string()
    )
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
