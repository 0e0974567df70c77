//! Brute-force reference metrics, written from the definitions with no
//! shared code or summation shortcuts.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

/// Per-class precision/recall F1 averaged over classes seen in either input.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let classes: BTreeSet<usize> = pred.iter().chain(truth).copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &c in &classes {
        let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
        let actual = truth.iter().filter(|&&t| t == c).count() as f64;
        let hit = pred
            .iter()
            .zip(truth)
            .filter(|(&p, &t)| p == c && t == c)
            .count() as f64;
        let precision = if predicted > 0.0 {
            hit / predicted
        } else {
            0.0
        };
        let recall = if actual > 0.0 { hit / actual } else { 0.0 };
        sum += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    sum / classes.len() as f64
}

fn entropy(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1.0;
    }
    let n = labels.len() as f64;
    counts.values().map(|c| -(c / n) * (c / n).ln()).sum()
}

/// Mutual information over the arithmetic mean of the entropies; two
/// single-block partitions are identical, hence 1.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (ha, hb) = (entropy(a), entropy(b));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    let xs: BTreeSet<usize> = a.iter().copied().collect();
    let ys: BTreeSet<usize> = b.iter().copied().collect();
    for &x in &xs {
        for &y in &ys {
            let pxy = a.iter().zip(b).filter(|(&u, &v)| u == x && v == y).count() as f64 / n;
            if pxy == 0.0 {
                continue;
            }
            let px = a.iter().filter(|&&u| u == x).count() as f64 / n;
            let py = b.iter().filter(|&&v| v == y).count() as f64 / n;
            mi += pxy * (pxy / (px * py)).ln();
        }
    }
    mi / ((ha + hb) / 2.0)
}

/// Full sort of every other node by (cosine desc, index asc).
pub fn sim_at_k(rows: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y);
    let norm = |a: &[f64]| dot(a, a).sqrt();
    let n = rows.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    dot(&rows[i], &rows[j]) / (norm(&rows[i]) * norm(&rows[j])),
                    j,
                )
            })
            .collect();
        others.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let same = others[..k]
            .iter()
            .filter(|(_, j)| labels[*j] == labels[i])
            .count();
        total += same as f64 / k as f64;
    }
    total / n as f64
}
