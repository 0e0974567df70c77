//! Downstream evaluation of frozen embeddings: classification, clustering,
//! and similarity search.

use std::time::Instant;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::argmax;
use crate::graph::Split;
use crate::ndauto::{Adam, ParamStore, Tape, Tensor};
use crate::objective::cross_entropy_loss;

/// Mean and population standard deviation of repeated measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Unweighted mean of per-class F1 over every class that occurs in either
/// `truth` or `pred`; a class with no true or predicted members scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let classes = pred.iter().chain(truth).copied().max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fne = vec![0usize; classes];
    let mut present = vec![false; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        present[p] = true;
        present[t] = true;
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let mut total = 0.0;
    let mut count = 0;
    for c in (0..classes).filter(|&c| present[c]) {
        let denom = 2 * tp[c] + fp[c] + fne[c];
        total += if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        };
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Hyperparameters of the downstream logistic-regression probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            steps: 300,
            lr: 0.01,
            weight_decay: 1e-4,
            init_scale: 0.01,
        }
    }
}

/// Multinomial logistic regression `softmax(Z W + b)`.
#[derive(Clone, Debug)]
pub struct LogReg {
    w: Tensor,
    b: Tensor,
}

impl LogReg {
    /// Fits on the rows `train` of `z` with Adam on the cross-entropy.
    pub fn fit(
        z: &Tensor,
        labels: &[Option<usize>],
        train: &[usize],
        num_classes: usize,
        seed: u64,
        cfg: &LogRegConfig,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = store.add(
            "logreg.w",
            Tensor::uniform(z.cols(), num_classes, cfg.init_scale, &mut rng),
        );
        let b = store.add("logreg.b", Tensor::zeros(1, num_classes));
        let mut opt = Adam::new(cfg.lr).with_weight_decay(cfg.weight_decay);
        let x = z.select_rows(train);
        let local: Vec<Option<usize>> = train.iter().map(|&i| labels[i]).collect();
        let rows: Vec<usize> = (0..train.len()).collect();
        for _ in 0..cfg.steps {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.param(&store, w);
            let bv = tape.param(&store, b);
            let logits = tape.matmul(xv, wv)?;
            let logits = tape.add(logits, bv)?;
            let loss = cross_entropy_loss(&mut tape, logits, &local, &rows)?;
            tape.backward(loss, &mut store)?;
            opt.step(&mut store)?;
        }
        Ok(LogReg {
            w: store.get(w).clone(),
            b: store.get(b).clone(),
        })
    }

    /// Class probabilities for the rows `nodes` of `z`.
    pub fn predict_proba(&self, z: &Tensor, nodes: &[usize]) -> Result<Tensor> {
        let mut logits = z.select_rows(nodes).matmul(&self.w)?;
        let c = logits.cols();
        for r in 0..logits.rows() {
            let row = logits.row_mut(r);
            for (v, b) in row.iter_mut().zip(self.b.data()) {
                *v += b;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        debug_assert_eq!(c, self.w.cols());
        Ok(logits)
    }

    pub fn predict(&self, z: &Tensor, nodes: &[usize]) -> Result<Vec<usize>> {
        let p = self.predict_proba(z, nodes)?;
        Ok((0..p.rows()).map(|r| argmax(p.row(r))).collect())
    }
}

pub(crate) fn labels_of(labels: &[Option<usize>], nodes: &[usize]) -> Result<Vec<usize>> {
    nodes
        .iter()
        .map(|&i| {
            labels
                .get(i)
                .copied()
                .flatten()
                .ok_or(Error::MissingLabels("evaluation"))
        })
        .collect()
}

fn check_train_covers(labels: &[Option<usize>], split: &Split, eval_nodes: &[usize]) -> Result<()> {
    let trained: std::collections::HashSet<usize> =
        labels_of(labels, &split.train)?.into_iter().collect();
    for class in labels_of(labels, eval_nodes)? {
        if !trained.contains(&class) {
            return Err(Error::ClassMissingFromTrain { class });
        }
    }
    Ok(())
}

/// Test and validation Macro-F1 of logistic regression, one fit per seed.
pub fn logreg_macro_f1(
    z: &Tensor,
    labels: &[Option<usize>],
    split: &Split,
    num_classes: usize,
    seeds: &[u64],
    cfg: &LogRegConfig,
) -> Result<(MeanStd, MeanStd)> {
    check_train_covers(labels, split, &split.test)?;
    let truth_test = labels_of(labels, &split.test)?;
    let truth_val = labels_of(labels, &split.val)?;
    let mut test = Vec::with_capacity(seeds.len());
    let mut val = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let model = LogReg::fit(z, labels, &split.train, num_classes, seed, cfg)?;
        test.push(macro_f1(&model.predict(z, &split.test)?, &truth_test));
        if !split.val.is_empty() {
            val.push(macro_f1(&model.predict(z, &split.val)?, &truth_val));
        }
    }
    Ok((MeanStd::of(&test), MeanStd::of(&val)))
}

/// Lloyd's iterations of one k-means run.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Tensor,
    /// Inertia after every assignment step.
    pub inertia: Vec<f64>,
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means with k-means++ seeding. Stops after `KMEANS_MAX_ITER` steps or when
/// the inertia improves by less than `KMEANS_TOL` relative to its value.
/// An empty cluster is re-seeded at the point farthest from its centroid.
pub fn kmeans(z: &Tensor, k: usize, seed: u64) -> Result<KMeansFit> {
    let n = z.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "k-means needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = z.cols();
    let mut centroids = Tensor::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(z.row(first));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(z.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(&mut rng),
            // every point coincides with a centroid already
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(c).copy_from_slice(z.row(pick));
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sq_dist(z.row(i), centroids.row(c)));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut inertia: Vec<f64> = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        for i in 0..n {
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let dd = sq_dist(z.row(i), centroids.row(c));
                if dd < best.1 {
                    best = (c, dd);
                }
            }
            assignments[i] = best.0;
            dist[i] = best.1;
        }
        let current: f64 = dist.iter().sum();
        if let Some(&prev) = inertia.last() {
            debug_assert!(
                current <= prev * (1.0 + 1e-12) + 1e-300,
                "k-means inertia increased from {prev} to {current}"
            );
        }
        inertia.push(current);
        if inertia.len() >= 2 && inertia[inertia.len() - 2] - current <= KMEANS_TOL * current {
            break;
        }

        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignments[i]] += 1;
            for (s, v) in sums.row_mut(assignments[i]).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = sums.row(c).to_vec();
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(row) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
                centroids.row_mut(c).copy_from_slice(z.row(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok(KMeansFit {
        assignments,
        centroids,
        inertia,
    })
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with the arithmetic mean of the two
/// entropies in the denominator. Two single-block partitions score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let (ha, hb) = (entropy(&ca, n), entropy(&cb, n));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let nxy = joint[x * kb + y];
            if nxy > 0 {
                let nxy = nxy as f64;
                mi += nxy / n * (n * nxy / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    let denom = (ha + hb) / 2.0;
    (mi / denom).clamp(0.0, 1.0)
}

/// NMI of k-means clusters of the rows `nodes` against their labels, one
/// k-means run per seed.
pub fn kmeans_nmi(
    z: &Tensor,
    labels: &[Option<usize>],
    nodes: &[usize],
    k: usize,
    seeds: &[u64],
) -> Result<MeanStd> {
    let truth = labels_of(labels, nodes)?;
    let x = z.select_rows(nodes);
    let mut scores = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        scores.push(nmi(&kmeans(&x, k, seed)?.assignments, &truth));
    }
    Ok(MeanStd::of(&scores))
}

/// Mean fraction of each node's `k` most cosine-similar other nodes that
/// share its label, over the rows `nodes` (ties to the lower index).
pub fn sim_at_k(z: &Tensor, labels: &[Option<usize>], nodes: &[usize], k: usize) -> Result<f64> {
    let truth = labels_of(labels, nodes)?;
    let m = nodes.len();
    if k == 0 || k >= m {
        return Err(Error::Config(format!("sim@k needs 1 <= k < {m}, got {k}")));
    }
    let x = z.select_rows(nodes);
    let norms: Vec<f64> = (0..m)
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNorm {
            node: nodes[i],
            what: "embedding",
        });
    }
    let mut gram = Tensor::zeros(m, m);
    crate::ndauto::gram_into(x.data(), m, x.cols(), gram.data_mut());
    let mut total = 0.0;
    let mut order: Vec<usize> = Vec::with_capacity(m);
    let mut sim = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            sim[j] = gram.get(i, j) / (norms[i] * norms[j]);
        }
        order.clear();
        order.extend((0..m).filter(|&j| j != i));
        let by_rank = |a: &usize, b: &usize| sim[*b].total_cmp(&sim[*a]).then(a.cmp(b));
        order.select_nth_unstable_by(k - 1, by_rank);
        let hits = order[..k].iter().filter(|&&j| truth[j] == truth[i]).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / m as f64)
}

/// Seeds and sizes of the evaluation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub classifier_seeds: Vec<u64>,
    pub kmeans_seeds: Vec<u64>,
    pub sim_k: usize,
    pub logreg: LogRegConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            classifier_seeds: (0..5).collect(),
            kmeans_seeds: (0..10).collect(),
            sim_k: 5,
            logreg: LogRegConfig::default(),
        }
    }
}

/// Which nodes each metric is computed over.
pub const CLUSTERING_SCOPE: &str = "test split";
pub const SIMILARITY_SCOPE: &str = "all labeled nodes";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub macro_f1: Option<MeanStd>,
    pub val_macro_f1: Option<MeanStd>,
    pub nmi: Option<MeanStd>,
    pub sim_at_5: Option<f64>,
    pub timing_s: Timing,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub classification: f64,
    pub clustering: f64,
    pub similarity: f64,
}

/// Runs all three tasks on one embedding matrix.
pub fn evaluate_embeddings(
    z: &Tensor,
    labels: &[Option<usize>],
    num_classes: usize,
    split: &Split,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    if !z.all_finite() {
        return Err(Error::NonFinite {
            op: "evaluate_embeddings",
        });
    }
    let mut report = EvaluationReport::default();
    let t = Instant::now();
    let (test, val) = logreg_macro_f1(
        z,
        labels,
        split,
        num_classes,
        &cfg.classifier_seeds,
        &cfg.logreg,
    )?;
    report.macro_f1 = Some(test);
    report.val_macro_f1 = Some(val);
    report.timing_s.classification = t.elapsed().as_secs_f64();

    let t = Instant::now();
    report.nmi = Some(kmeans_nmi(
        z,
        labels,
        &split.test,
        num_classes,
        &cfg.kmeans_seeds,
    )?);
    report.timing_s.clustering = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    report.sim_at_5 = Some(sim_at_k(z, labels, &labeled, cfg.sim_k)?);
    report.timing_s.similarity = t.elapsed().as_secs_f64();
    Ok(report)
}
