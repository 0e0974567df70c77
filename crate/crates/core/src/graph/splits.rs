use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiplexGraph;
use crate::error::{Error, Result};

/// Train / validation / test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.1,
            val: 0.1,
            test: 0.8,
        }
    }
}

/// Disjoint node index lists, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Split {
    /// Checks disjointness, labels, and that every test/val class is trained on.
    pub fn validate(&self, g: &MultiplexGraph) -> Result<()> {
        let labels = g.labels().ok_or(Error::MissingLabels("splits"))?;
        if self.val.is_empty() || self.test.is_empty() {
            return Err(Error::EmptySplit);
        }
        let mut seen = vec![false; g.num_nodes()];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= g.num_nodes() || labels[i].is_none() {
                return Err(Error::InvalidGraph(format!(
                    "split node {i} is out of range or unlabeled"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidGraph(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        let mut trained = vec![false; g.num_classes()];
        for &i in &self.train {
            trained[labels[i].unwrap()] = true;
        }
        for &i in self.val.iter().chain(&self.test) {
            let class = labels[i].unwrap();
            if !trained[class] {
                return Err(Error::ClassMissingFromTrain { class });
            }
        }
        Ok(())
    }
}

/// Seeded split stratified by class. Each class contributes
/// `max(1, round(r_train * n_c))` training nodes, the same rule for
/// validation (when `r_val > 0`), and the remainder to test.
pub fn make_splits(g: &MultiplexGraph, ratios: SplitRatios, seed: u64) -> Result<Split> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r))
        || (train + val + test - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios {train}/{val}/{test} must be in [0,1] and sum to 1"
        )));
    }
    let labels = g.labels().ok_or(Error::MissingLabels("splits"))?;
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            by_class[*c].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed: Some(seed),
    };
    for (class, nodes) in by_class.iter_mut().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 3 {
            return Err(Error::ClassTooSmall {
                class,
                count: nodes.len(),
            });
        }
        nodes.shuffle(&mut rng);
        let n = nodes.len();
        let n_train = ((train * n as f64).round() as usize).clamp(1, n);
        let n_val = if val > 0.0 {
            ((val * n as f64).round() as usize).max(1).min(n - n_train)
        } else {
            0
        };
        split.train.extend_from_slice(&nodes[..n_train]);
        split
            .val
            .extend_from_slice(&nodes[n_train..n_train + n_val]);
        split.test.extend_from_slice(&nodes[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    if split.val.is_empty() || split.test.is_empty() {
        return Err(Error::EmptySplit);
    }
    Ok(split)
}

/// Reads `splits.json` from a dataset directory, if present.
pub fn load_splits(dir: impl AsRef<Path>, g: &MultiplexGraph) -> Result<Option<Split>> {
    let path = dir.as_ref().join("splits.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut split: Split = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        path: path.clone(),
        msg: e.to_string(),
    })?;
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split.validate(g)?;
    Ok(Some(split))
}
