//! Self-supervised and supervised training losses.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::ndauto::{ParamId, ParamStore, Tape, Tensor, Var, STANDARDIZE_EPS};

/// Probabilities are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before any log.
pub const LOG_CLAMP: f64 = 1e-7;

/// Bilinear discriminator between node embeddings and a graph summary.
#[derive(Clone, Debug)]
pub struct DgiHead {
    w: ParamId,
    dim: usize,
}

impl DgiHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.disc"), Tensor::glorot(dim, dim, rng));
        DgiHead { w, dim }
    }

    pub fn param(&self) -> ParamId {
        self.w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Binary cross-entropy of discriminating `z_pos` rows (target 1) from
/// `z_neg` rows (target 0) against the summary `sigmoid(mean_rows(z_pos))`,
/// averaged over all `2N` scores.
pub fn dgi_loss(
    head: &DgiHead,
    tape: &mut Tape,
    store: &ParamStore,
    z_pos: Var,
    z_neg: Var,
) -> Result<Var> {
    let (pos, neg) = (tape.value(z_pos).shape(), tape.value(z_neg).shape());
    if pos != neg || pos.1 != head.dim {
        return Err(Error::dim(
            "dgi_loss",
            format!("{pos:?} vs {neg:?} with a {}-dim head", head.dim),
        ));
    }
    let mean = tape.mean_rows(z_pos)?;
    let summary = tape.sigmoid(mean)?;
    let w = tape.param(store, head.w);
    let v = tape.matmul_nt(w, summary)?;
    let lp = tape.matmul(z_pos, v)?;
    let ln = tape.matmul(z_neg, v)?;
    let sp = tape.sigmoid(lp)?;
    let sn = tape.sigmoid(ln)?;
    let bp = tape.binary_cross_entropy(sp, &vec![1.0; pos.0], LOG_CLAMP)?;
    let bn = tape.binary_cross_entropy(sn, &vec![0.0; pos.0], LOG_CLAMP)?;
    let total = tape.add(bp, bn)?;
    tape.scale(total, 0.5)
}

/// Off-diagonal weight and standardization epsilon of the Barlow Twins loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BtConfig {
    pub lambda: f64,
    pub eps: f64,
}

impl BtConfig {
    pub fn new(lambda: f64) -> Self {
        BtConfig {
            lambda,
            eps: STANDARDIZE_EPS,
        }
    }

    /// `lambda = 1 / d`.
    pub fn for_dim(d: usize) -> Self {
        Self::new(1.0 / d as f64)
    }
}

fn check_variance(t: &Tensor) -> Result<()> {
    for c in 0..t.cols() {
        let first = t.get(0, c);
        if (1..t.rows()).all(|r| t.get(r, c) == first) {
            return Err(Error::ZeroVariance { column: c });
        }
    }
    Ok(())
}

/// `sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2` where `C` is the
/// cross-correlation of the column-standardized inputs.
pub fn barlow_twins_loss(tape: &mut Tape, z_a: Var, z_b: Var, cfg: BtConfig) -> Result<Var> {
    let (a, b) = (tape.value(z_a), tape.value(z_b));
    if a.shape() != b.shape() || a.rows() < 2 {
        return Err(Error::dim(
            "barlow_twins_loss",
            format!("{:?} vs {:?} (need N >= 2)", a.shape(), b.shape()),
        ));
    }
    if !cfg.lambda.is_finite() || cfg.lambda < 0.0 {
        return Err(Error::Config(format!(
            "BT lambda {} must be finite and non-negative",
            cfg.lambda
        )));
    }
    check_variance(a)?;
    check_variance(b)?;
    let n = a.rows() as f64;
    let sa = tape.colwise_standardize_with(z_a, cfg.eps)?;
    let sb = tape.colwise_standardize_with(z_b, cfg.eps)?;
    let c = tape.matmul_tn(sa, sb)?;
    let c = tape.scale(c, 1.0 / n)?;
    tape.correlation_penalty(c, cfg.lambda)
}

/// Mean squared elementwise difference.
pub fn mse_loss(tape: &mut Tape, z_a: Var, z_b: Var) -> Result<Var> {
    let d = tape.sub(z_a, z_b)?;
    let sq = tape.hadamard(d, d)?;
    tape.mean_all(sq)
}

/// Binary cross-entropy of `sigmoid(z_u . z_v)`: positives target 1,
/// negatives target 0.
pub fn link_prediction_loss(tape: &mut Tape, z: Var, pos: &[Edge], neg: &[Edge]) -> Result<Var> {
    let n = tape.value(z).rows();
    if let Some(&(u, v)) = pos.iter().chain(neg).find(|&&(u, v)| u >= n || v >= n) {
        return Err(Error::InvalidGraph(format!(
            "edge ({u}, {v}) outside {n} nodes"
        )));
    }
    let src: Vec<usize> = pos.iter().chain(neg).map(|e| e.0).collect();
    let dst: Vec<usize> = pos.iter().chain(neg).map(|e| e.1).collect();
    let zu = tape.gather_rows(z, &src)?;
    let zv = tape.gather_rows(z, &dst)?;
    let prod = tape.hadamard(zu, zv)?;
    let logits = tape.row_sums(prod)?;
    let p = tape.sigmoid(logits)?;
    let mut targets = vec![1.0; pos.len()];
    targets.resize(pos.len() + neg.len(), 0.0);
    tape.binary_cross_entropy(p, &targets, LOG_CLAMP)
}

/// Mean negative log-softmax probability of the true class over `mask`.
pub fn cross_entropy_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<Var> {
    let classes = tape.value(logits).cols();
    let mut ys = Vec::with_capacity(mask.len());
    for &i in mask {
        match labels.get(i).copied().flatten() {
            Some(y) if y < classes => ys.push(y),
            Some(y) => {
                return Err(Error::Config(format!(
                    "label {y} of node {i} is >= {classes} classes"
                )))
            }
            None => return Err(Error::MissingLabels("cross-entropy")),
        }
    }
    tape.cross_entropy(logits, mask, &ys)
}

/// Uniform sampler of node pairs that are not edges (in either direction)
/// of a reference edge set, and not self-pairs.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    num_nodes: usize,
    observed: HashSet<Edge>,
}

impl NegativeSampler {
    pub fn new(num_nodes: usize, edges: &[Edge]) -> Self {
        let mut observed = HashSet::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            observed.insert((u, v));
            observed.insert((v, u));
        }
        NegativeSampler {
            num_nodes,
            observed,
        }
    }

    pub fn is_observed(&self, e: Edge) -> bool {
        self.observed.contains(&e)
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Edge>> {
        let n = self.num_nodes;
        let free = (n * n.saturating_sub(1))
            .saturating_sub(self.observed.iter().filter(|e| e.0 != e.1).count());
        if count > 0 && free == 0 {
            return Err(Error::InvalidGraph(
                "no non-edges left to sample negatives from".into(),
            ));
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v && !self.observed.contains(&(u, v)) {
                out.push((u, v));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndauto::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn dgi_with_zero_discriminator_is_ln2() {
        let mut store = ParamStore::new();
        let head = DgiHead::new(&mut store, "h", 4, &mut rng());
        store.get_mut(head.param()).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let zp = tape.constant(Tensor::uniform(6, 4, 1.0, &mut rng()));
        let zn = tape.constant(Tensor::uniform(6, 4, 1.0, &mut rng()));
        let loss = dgi_loss(&head, &mut tape, &store, zp, zn).unwrap();
        approx::assert_abs_diff_eq!(tape.value(loss).item(), LN_2, epsilon = 1e-12);
    }

    #[test]
    fn dgi_saturated_scores_hit_the_clamp_floor() {
        let mut store = ParamStore::new();
        let head = DgiHead::new(&mut store, "h", 1, &mut rng());
        store.get_mut(head.param()).data_mut()[0] = 1.0;
        let mut tape = Tape::new();
        let zp = tape.constant(Tensor::full(3, 1, 100.0));
        let zn = tape.constant(Tensor::full(3, 1, -100.0));
        let loss = dgi_loss(&head, &mut tape, &store, zp, zn).unwrap();
        let v = tape.value(loss).item();
        assert!(v > 0.0 && v < 2e-7, "{v}");
    }

    #[test]
    fn dgi_gradcheck() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let head = DgiHead::new(&mut store, "h", 4, &mut r);
        let zp = store.add("zp", Tensor::uniform(6, 4, 1.0, &mut r));
        let zn = store.add("zn", Tensor::uniform(6, 4, 1.0, &mut r));
        let report = grad_check(
            &mut store,
            |t, s| {
                let (a, b) = (t.param(s, zp), t.param(s, zn));
                dgi_loss(&head, t, s, a, b)
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn dgi_shape_mismatch() {
        let mut store = ParamStore::new();
        let head = DgiHead::new(&mut store, "h", 2, &mut rng());
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(3, 2));
        let b = tape.constant(Tensor::zeros(4, 2));
        assert!(dgi_loss(&head, &mut tape, &store, a, b).is_err());
    }

    /// Columns `±1` patterns that are exactly mean-zero, unit-variance and
    /// mutually uncorrelated.
    fn whitened() -> Tensor {
        Tensor::from_rows(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]).unwrap()
    }

    #[test]
    fn bt_identity_correlation_is_zero() {
        let mut tape = Tape::new();
        let z = tape.constant(whitened());
        let loss = barlow_twins_loss(&mut tape, z, z, BtConfig::for_dim(2)).unwrap();
        approx::assert_abs_diff_eq!(tape.value(loss).item(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn bt_negated_view_is_four_d() {
        let mut tape = Tape::new();
        let z = tape.constant(whitened());
        let neg = tape.scale(z, -1.0).unwrap();
        let loss = barlow_twins_loss(&mut tape, z, neg, BtConfig::for_dim(2)).unwrap();
        approx::assert_abs_diff_eq!(tape.value(loss).item(), 8.0, epsilon = 1e-4);
    }

    #[test]
    fn bt_lambda_zero_ignores_off_diagonal() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [0.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let z = tape.constant(a);
        let zero = barlow_twins_loss(&mut tape, z, z, BtConfig::new(0.0)).unwrap();
        let one = barlow_twins_loss(&mut tape, z, z, BtConfig::new(1.0)).unwrap();
        let s = tape.colwise_standardize(z).unwrap();
        let c = tape.matmul_tn(s, s).unwrap();
        let c = tape.scale(c, 0.25).unwrap();
        let off = tape.value(c).get(0, 1);
        assert!(off.abs() > 0.1);
        let diag: f64 = (0..2)
            .map(|i| (1.0 - tape.value(c).get(i, i)).powi(2))
            .sum();
        approx::assert_abs_diff_eq!(tape.value(zero).item(), diag, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(
            tape.value(one).item() - tape.value(zero).item(),
            2.0 * off * off,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bt_constant_column_names_column() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[[1.0, 3.0], [2.0, 3.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [2.0, 1.0]]).unwrap());
        assert!(matches!(
            barlow_twins_loss(&mut tape, a, b, BtConfig::new(1.0)),
            Err(Error::ZeroVariance { column: 1 })
        ));
    }

    #[test]
    fn bt_gradcheck() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::uniform(6, 3, 1.0, &mut r));
        let b = store.add("b", Tensor::uniform(6, 3, 1.0, &mut r));
        let report = grad_check(
            &mut store,
            |t, s| {
                let (a, b) = (t.param(s, a), t.param(s, b));
                barlow_twins_loss(t, a, b, BtConfig::new(0.3))
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let b = tape.constant(Tensor::zeros(1, 2));
        let l = mse_loss(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(l).item(), 2.5);
        let same = mse_loss(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);

        let mut store = ParamStore::new();
        let za = store.add("za", Tensor::from_rows(&[[1.0, 2.0], [0.5, -1.0]]).unwrap());
        let zb = Tensor::from_rows(&[[0.0, 1.0], [1.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, za);
        let bv = tape.constant(zb.clone());
        let l = mse_loss(&mut tape, av, bv).unwrap();
        tape.backward(l, &mut store).unwrap();
        let expect: Vec<f64> = store
            .get(za)
            .data()
            .iter()
            .zip(zb.data())
            .map(|(a, b)| 2.0 * (a - b) / 4.0)
            .collect();
        assert_eq!(store.get(za).grad().unwrap(), expect.as_slice());
    }

    #[test]
    fn link_prediction_limits() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(4, 3));
        let l = link_prediction_loss(&mut tape, z, &[(0, 1), (2, 3)], &[(0, 3), (1, 2)]).unwrap();
        approx::assert_abs_diff_eq!(tape.value(l).item(), LN_2, epsilon = 1e-12);

        let z = tape.constant(Tensor::from_rows(&[[30.0], [30.0], [-30.0]]).unwrap());
        let l = link_prediction_loss(&mut tape, z, &[(0, 1)], &[(0, 2)]).unwrap();
        assert!(tape.value(l).item() < 1e-6);
        assert!(link_prediction_loss(&mut tape, z, &[(0, 3)], &[]).is_err());
    }

    #[test]
    fn link_prediction_gradcheck() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let z = store.add("z", Tensor::uniform(5, 3, 1.0, &mut r));
        let report = grad_check(
            &mut store,
            |t, s| {
                let zv = t.param(s, z);
                link_prediction_loss(t, zv, &[(0, 1), (1, 2), (3, 4)], &[(0, 4), (2, 3), (1, 1)])
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let labels = [Some(0), Some(1), Some(2)];
        let l = tape.constant(Tensor::zeros(3, 3));
        let ce = cross_entropy_loss(&mut tape, l, &labels, &[0, 1, 2]).unwrap();
        approx::assert_abs_diff_eq!(tape.value(ce).item(), 3f64.ln(), epsilon = 1e-12);
        let l = tape.constant(Tensor::identity(3));
        let sharp = tape.scale(l, 1000.0).unwrap();
        let ce = cross_entropy_loss(&mut tape, sharp, &labels, &[0, 1, 2]).unwrap();
        assert!(tape.value(ce).item() < 1e-12);
        assert!(cross_entropy_loss(&mut tape, l, &[Some(3), None, None], &[0]).is_err());
    }

    #[test]
    fn negative_sampler_avoids_edges() {
        let edges = [(0, 1), (1, 2), (2, 3)];
        let s = NegativeSampler::new(4, &edges);
        let neg = s.sample(200, &mut rng()).unwrap();
        assert_eq!(neg.len(), 200);
        for (u, v) in neg {
            assert_ne!(u, v);
            assert!(!edges.contains(&(u, v)) && !edges.contains(&(v, u)));
        }
        let full = NegativeSampler::new(2, &[(0, 1)]);
        assert!(full.sample(1, &mut rng()).is_err());
    }
}
