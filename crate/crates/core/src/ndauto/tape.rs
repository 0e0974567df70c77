//! Wengert-list reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Tape`] lives for one forward/backward pass. Leaves are either
//! constants or copies of parameters from a [`ParamStore`]; every operation
//! appends a node whose inputs are strictly earlier nodes, so a single
//! reverse sweep visits each op exactly once.

use std::collections::HashMap;
use std::sync::Arc;

use super::sparse::{spmm_into, spmm_t_into};
use super::tensor::kernels;
use super::{ParamId, ParamStore, SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Epsilon added to the variance in [`Tape::colwise_standardize`].
pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Operation kinds, in the vocabulary exposed to callers of the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Spmm,
    SpmmValues,
    SymNormValues,
    Add,
    Sub,
    Hadamard,
    Scale,
    MulScalar,
    Prelu,
    Sigmoid,
    Tanh,
    Softplus,
    SoftmaxRows,
    ColwiseStandardize,
    MeanRows,
    SumAll,
    MeanAll,
    ConcatCols,
    GatherRows,
    SliceCols,
    RowSums,
    BinaryCrossEntropy,
    CrossEntropy,
    CorrelationPenalty,
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Spmm {
        a: Arc<SparseMatrix>,
        b: Var,
    },
    SpmmValues {
        pattern: Arc<SparseMatrix>,
        values: Var,
        b: Var,
    },
    SymNormValues {
        pattern: Arc<SparseMatrix>,
        weights: Var,
        inv_sqrt_deg: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    MulScalar {
        s: Var,
        a: Var,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Softplus {
        x: Var,
    },
    SoftmaxRows {
        x: Var,
    },
    ColwiseStandardize {
        x: Var,
        inv_std: Vec<f64>,
    },
    MeanRows {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    RowSums {
        x: Var,
    },
    BinaryCrossEntropy {
        p: Var,
        targets: Vec<f64>,
        lo: f64,
        hi: f64,
    },
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
    },
    CorrelationPenalty {
        c: Var,
        lambda: f64,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Spmm { .. } => OpKind::Spmm,
            Op::SpmmValues { .. } => OpKind::SpmmValues,
            Op::SymNormValues { .. } => OpKind::SymNormValues,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Hadamard { .. } => OpKind::Hadamard,
            Op::Scale { .. } => OpKind::Scale,
            Op::MulScalar { .. } => OpKind::MulScalar,
            Op::Prelu { .. } => OpKind::Prelu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Softplus { .. } => OpKind::Softplus,
            Op::SoftmaxRows { .. } => OpKind::SoftmaxRows,
            Op::ColwiseStandardize { .. } => OpKind::ColwiseStandardize,
            Op::MeanRows { .. } => OpKind::MeanRows,
            Op::SumAll { .. } => OpKind::SumAll,
            Op::MeanAll { .. } => OpKind::MeanAll,
            Op::ConcatCols { .. } => OpKind::ConcatCols,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::RowSums { .. } => OpKind::RowSums,
            Op::BinaryCrossEntropy { .. } => OpKind::BinaryCrossEntropy,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::CorrelationPenalty { .. } => OpKind::CorrelationPenalty,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Recorded computation for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. }
            | Op::Add { a, b, .. }
            | Op::Sub { a, b }
            | Op::Hadamard { a, b } => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Spmm { b, .. } => self.requires_grad(*b),
            Op::SpmmValues { values, b, .. } => {
                self.requires_grad(*values) || self.requires_grad(*b)
            }
            Op::SymNormValues { weights, .. } => self.requires_grad(*weights),
            Op::Scale { a, .. } => self.requires_grad(*a),
            Op::MulScalar { s, a } => self.requires_grad(*s) || self.requires_grad(*a),
            Op::Prelu { x, slope } => self.requires_grad(*x) || self.requires_grad(*slope),
            Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Softplus { x }
            | Op::SoftmaxRows { x }
            | Op::ColwiseStandardize { x, .. }
            | Op::MeanRows { x }
            | Op::SumAll { x }
            | Op::MeanAll { x }
            | Op::GatherRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::RowSums { x } => self.requires_grad(*x),
            Op::ConcatCols { parts } => parts.iter().any(|p| self.requires_grad(*p)),
            Op::BinaryCrossEntropy { p, .. } => self.requires_grad(*p),
            Op::CrossEntropy { logits, .. } => self.requires_grad(*logits),
            Op::CorrelationPenalty { c, .. } => self.requires_grad(*c),
        };
        self.nodes.push(Node {
            value: value.clone_without_grad(),
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t.clone_without_grad(),
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records (once per tape) a leaf bound to a parameter; its gradient is
    /// accumulated into the store during [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let t = store.get(id);
        self.nodes.push(Node {
            value: t.clone_without_grad(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    // ---- forward ops ------------------------------------------------------

    /// `a * b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, false, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, false, true)
    }

    /// `a^T * b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, true, false)
    }

    fn matmul_general(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = if ta {
            (av.cols(), av.rows())
        } else {
            av.shape()
        };
        let (k2, n) = if tb {
            (bv.cols(), bv.rows())
        } else {
            bv.shape()
        };
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{:?}{} x {:?}{}",
                    av.shape(),
                    if ta { "^T" } else { "" },
                    bv.shape(),
                    if tb { "^T" } else { "" }
                ),
            ));
        }
        let mut out = Tensor::zeros(m, n);
        match (ta, tb) {
            (false, false) => kernels::gemm(av.data(), m, k, bv.data(), n, out.data_mut()),
            (false, true) => kernels::gemm_nt(av.data(), m, k, bv.data(), n, out.data_mut()),
            (true, false) => kernels::gemm_tn(av.data(), k, m, bv.data(), n, out.data_mut()),
            (true, true) => return Err(Error::dim("matmul", "double transpose is not supported")),
        }
        self.push(Op::MatMul { a, b, ta, tb }, out, "matmul")
    }

    /// Sparse constant times dense: `a * b`.
    pub fn spmm(&mut self, a: &Arc<SparseMatrix>, b: Var) -> Result<Var> {
        let bv = self.value(b);
        if a.cols() != bv.rows() {
            return Err(Error::dim(
                "spmm",
                format!("{}x{} sparse x {:?}", a.rows(), a.cols(), bv.shape()),
            ));
        }
        let mut out = Tensor::zeros(a.rows(), bv.cols());
        spmm_into(a, a.values(), bv.data(), bv.cols(), out.data_mut());
        self.push(
            Op::Spmm {
                a: Arc::clone(a),
                b,
            },
            out,
            "spmm",
        )
    }

    /// Sparse times dense where the stored values are replaced by the
    /// differentiable `values` (an `nnz x 1` column).
    pub fn spmm_values(&mut self, pattern: &Arc<SparseMatrix>, values: Var, b: Var) -> Result<Var> {
        let (vv, bv) = (self.value(values), self.value(b));
        if vv.shape() != (pattern.nnz(), 1) {
            return Err(Error::dim(
                "spmm_values",
                format!("values {:?} for nnz {}", vv.shape(), pattern.nnz()),
            ));
        }
        if pattern.cols() != bv.rows() {
            return Err(Error::dim(
                "spmm_values",
                format!(
                    "{}x{} sparse x {:?}",
                    pattern.rows(),
                    pattern.cols(),
                    bv.shape()
                ),
            ));
        }
        let mut out = Tensor::zeros(pattern.rows(), bv.cols());
        spmm_into(pattern, vv.data(), bv.data(), bv.cols(), out.data_mut());
        self.push(
            Op::SpmmValues {
                pattern: Arc::clone(pattern),
                values,
                b,
            },
            out,
            "spmm_values",
        )
    }

    /// Symmetric degree normalization of per-entry weights:
    /// `w_e / sqrt(d_row(e) * d_col(e))` with `d = row sums of w`.
    pub fn sym_norm_values(&mut self, pattern: &Arc<SparseMatrix>, weights: Var) -> Result<Var> {
        let w = self.value(weights);
        if pattern.rows() != pattern.cols() || w.shape() != (pattern.nnz(), 1) {
            return Err(Error::dim(
                "sym_norm_values",
                "square pattern and nnz x 1 weights required",
            ));
        }
        let n = pattern.rows();
        let mut deg = vec![0.0; n];
        for r in 0..n {
            for e in pattern.row_ptr()[r]..pattern.row_ptr()[r + 1] {
                deg[r] += w.data()[e];
            }
        }
        if let Some(r) = deg.iter().position(|&d| d <= 0.0) {
            return Err(Error::InvalidGraph(format!(
                "node {r} has non-positive weighted degree"
            )));
        }
        let inv_sqrt_deg: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut out = Tensor::zeros(pattern.nnz(), 1);
        for r in 0..n {
            for e in pattern.row_ptr()[r]..pattern.row_ptr()[r + 1] {
                let c = pattern.col_idx()[e];
                out.data_mut()[e] = w.data()[e] / (deg[r] * deg[c]).sqrt();
            }
        }
        self.push(
            Op::SymNormValues {
                pattern: Arc::clone(pattern),
                weights,
                inv_sqrt_deg,
            },
            out,
            "sym_norm_values",
        )
    }

    /// Elementwise sum; `b` may also be a `1 x cols` row broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = av.shape() != bv.shape();
        if broadcast && (bv.rows() != 1 || bv.cols() != av.cols()) {
            return Err(Error::dim(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = av.clone_without_grad();
        let cols = av.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += if broadcast {
                bv.data()[i % cols]
            } else {
                bv.data()[i]
            };
        }
        self.push(Op::Add { a, b, broadcast }, out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("sub", av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::from_raw(av.rows(), av.cols(), data);
        self.push(Op::Sub { a, b }, out, "sub")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("hadamard", av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_raw(av.rows(), av.cols(), data);
        self.push(Op::Hadamard { a, b }, out, "hadamard")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| c * x).collect();
        let out = Tensor::from_raw(av.rows(), av.cols(), data);
        self.push(Op::Scale { a, c }, out, "scale")
    }

    /// `s * a` where `s` is a `1 x 1` node.
    pub fn mul_scalar(&mut self, s: Var, a: Var) -> Result<Var> {
        let (sv, av) = (self.value(s), self.value(a));
        if sv.shape() != (1, 1) {
            return Err(Error::dim(
                "mul_scalar",
                format!("scalar operand is {:?}", sv.shape()),
            ));
        }
        let c = sv.item();
        let data = av.data().iter().map(|x| c * x).collect();
        let out = Tensor::from_raw(av.rows(), av.cols(), data);
        self.push(Op::MulScalar { s, a }, out, "mul_scalar")
    }

    /// Parametric ReLU with one slope per column (`slope` is `1 x cols`).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(slope));
        if sv.shape() != (1, xv.cols()) {
            return Err(Error::dim(
                "prelu",
                format!("slope {:?} for input {:?}", sv.shape(), xv.shape()),
            ));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { sv.data()[i % cols] * v })
            .collect();
        let out = Tensor::from_raw(xv.rows(), cols, data);
        self.push(Op::Prelu { x, slope }, out, "prelu")
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        Tensor::from_raw(
            xv.rows(),
            xv.cols(),
            xv.data().iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, sigmoid);
        self.push(Op::Sigmoid { x }, out, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, f64::tanh);
        self.push(Op::Tanh { x }, out, "tanh")
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, softplus);
        self.push(Op::Softplus { x }, out, "softplus")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone_without_grad();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.push(Op::SoftmaxRows { x }, out, "softmax_rows")
    }

    /// Per-column `(x - mean) / sqrt(var + eps)` with population variance
    /// and `eps = STANDARDIZE_EPS`.
    pub fn colwise_standardize(&mut self, x: Var) -> Result<Var> {
        self.colwise_standardize_with(x, STANDARDIZE_EPS)
    }

    pub fn colwise_standardize_with(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        if n == 0 {
            return Err(Error::dim("colwise_standardize", "no rows"));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / n as f64 + eps).sqrt())
            .collect();
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                out.set(r, c, (xv.get(r, c) - mean[c]) * inv_std[c]);
            }
        }
        self.push(
            Op::ColwiseStandardize { x, inv_std },
            out,
            "colwise_standardize",
        )
    }

    /// Column means as a `1 x cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        if n == 0 {
            return Err(Error::dim("mean_rows", "no rows"));
        }
        let mut out = Tensor::zeros(1, d);
        for r in 0..n {
            for (o, v) in out.data_mut().iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        out.data_mut().iter_mut().for_each(|o| *o /= n as f64);
        self.push(Op::MeanRows { x }, out, "mean_rows")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push(Op::SumAll { x }, Tensor::scalar(total), "sum_all")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::dim("mean_all", "empty tensor"));
        }
        let mean = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push(Op::MeanAll { x }, Tensor::scalar(mean), "mean_all")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let n = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != n) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(n, total);
        for r in 0..n {
            let mut offset = 0;
            for p in parts {
                let pv = self.value(*p);
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            out,
            "concat_cols",
        )
    }

    /// Rows picked by `index` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} of {}", xv.rows()),
            ));
        }
        let out = xv.select_rows(index);
        self.push(
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            out,
            "gather_rows",
        )
    }

    /// Contiguous row range `start..start+len` (the `slice_rows` op).
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let index: Vec<usize> = (start..start + len).collect();
        self.gather_rows(x, &index)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::dim(
                "slice_cols",
                format!("{start}+{len} of {}", xv.cols()),
            ));
        }
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, out, "slice_cols")
    }

    /// Per-row sums as an `rows x 1` column.
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Tensor::from_raw(xv.rows(), 1, data);
        self.push(Op::RowSums { x }, out, "row_sums")
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets, with
    /// probabilities clamped to `[clamp, 1 - clamp]` before the log.
    pub fn binary_cross_entropy(&mut self, p: Var, targets: &[f64], clamp: f64) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != targets.len() || pv.is_empty() {
            return Err(Error::dim(
                "binary_cross_entropy",
                format!("{} probabilities, {} targets", pv.len(), targets.len()),
            ));
        }
        let (lo, hi) = (clamp, 1.0 - clamp);
        let total: f64 = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let pc = p.clamp(lo, hi);
                -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
            })
            .sum();
        let out = Tensor::scalar(total / targets.len() as f64);
        self.push(
            Op::BinaryCrossEntropy {
                p,
                targets: targets.to_vec(),
                lo,
                hi,
            },
            out,
            "binary_cross_entropy",
        )
    }

    /// Mean negative log-softmax probability of `labels[i]` at row `rows[i]`.
    pub fn cross_entropy(&mut self, logits: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(Error::dim(
                "cross_entropy",
                "rows and labels must be equal-length and non-empty",
            ));
        }
        let mut total = 0.0;
        for (&r, &y) in rows.iter().zip(labels) {
            if r >= lv.rows() || y >= lv.cols() {
                return Err(Error::dim(
                    "cross_entropy",
                    format!("row {r} / label {y} outside {:?}", lv.shape()),
                ));
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let out = Tensor::scalar(total / rows.len() as f64);
        self.push(
            Op::CrossEntropy {
                logits,
                rows: rows.to_vec(),
                labels: labels.to_vec(),
            },
            out,
            "cross_entropy",
        )
    }

    /// `sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2` for a square `C`.
    pub fn correlation_penalty(&mut self, c: Var, lambda: f64) -> Result<Var> {
        let cv = self.value(c);
        if cv.rows() != cv.cols() {
            return Err(Error::dim(
                "correlation_penalty",
                format!("{:?} is not square", cv.shape()),
            ));
        }
        let d = cv.rows();
        let mut on = 0.0;
        let mut off = 0.0;
        for i in 0..d {
            for j in 0..d {
                let v = cv.get(i, j);
                if i == j {
                    on += (1.0 - v) * (1.0 - v);
                } else {
                    off += v * v;
                }
            }
        }
        let out = Tensor::scalar(on + lambda * off);
        self.push(
            Op::CorrelationPenalty { c, lambda },
            out,
            "correlation_penalty",
        )
    }

    // ---- reverse sweep ----------------------------------------------------

    /// Back-propagates from the scalar `loss`, accumulating gradients into
    /// the grad slots of every trainable tensor in `store`. Parameters the
    /// loss does not depend on end up with a zero gradient.
    pub fn backward(self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                let slot = store.get_mut(id).grad_mut();
                for (s, v) in slot.iter_mut().zip(&g) {
                    *s += v;
                }
            }
        }
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            if t.requires_grad() {
                t.grad_mut();
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every node (None where unreachable
    /// or not requiring grad).
    fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NotScalar {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let n = self.nodes[target.0].value.len();
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n) = y.shape();
                match (ta, tb) {
                    (false, false) => {
                        let k = av.cols();
                        self.accumulate(grads, *a, |s| kernels::gemm_nt(g, m, n, bv.data(), k, s));
                        self.accumulate(grads, *b, |s| kernels::gemm_tn(av.data(), m, k, g, n, s));
                    }
                    (false, true) => {
                        let k = av.cols();
                        self.accumulate(grads, *a, |s| kernels::gemm(g, m, n, bv.data(), k, s));
                        self.accumulate(grads, *b, |s| kernels::gemm_tn(g, m, n, av.data(), k, s));
                    }
                    (true, false) => {
                        let k = av.rows();
                        self.accumulate(grads, *a, |s| kernels::gemm_nt(bv.data(), k, n, g, m, s));
                        self.accumulate(grads, *b, |s| kernels::gemm(av.data(), k, m, g, n, s));
                    }
                    (true, true) => unreachable!("rejected in forward"),
                }
            }
            Op::Spmm { a, b } => {
                let n = y.cols();
                self.accumulate(grads, *b, |s| spmm_t_into(a, a.values(), g, n, s));
            }
            Op::SpmmValues { pattern, values, b } => {
                let n = y.cols();
                let (vv, bv) = (self.value(*values), self.value(*b));
                self.accumulate(grads, *b, |s| spmm_t_into(pattern, vv.data(), g, n, s));
                self.accumulate(grads, *values, |s| {
                    for r in 0..pattern.rows() {
                        let grow = &g[r * n..(r + 1) * n];
                        for e in pattern.row_ptr()[r]..pattern.row_ptr()[r + 1] {
                            let c = pattern.col_idx()[e];
                            let brow = &bv.data()[c * n..(c + 1) * n];
                            s[e] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
            }
            Op::SymNormValues {
                pattern,
                weights,
                inv_sqrt_deg,
            } => {
                let w = self.value(*weights).data();
                let rows = pattern.row_ptr();
                let cols = pattern.col_idx();
                let mut acc = vec![0.0; pattern.rows()];
                for r in 0..pattern.rows() {
                    for e in rows[r]..rows[r + 1] {
                        let c = cols[e];
                        acc[r] += g[e] * w[e] * inv_sqrt_deg[c];
                        acc[c] += g[e] * w[e] * inv_sqrt_deg[r];
                    }
                }
                self.accumulate(grads, *weights, |s| {
                    for r in 0..pattern.rows() {
                        let cube = inv_sqrt_deg[r].powi(3);
                        for e in rows[r]..rows[r + 1] {
                            let c = cols[e];
                            s[e] += g[e] * inv_sqrt_deg[r] * inv_sqrt_deg[c] - 0.5 * cube * acc[r];
                        }
                    }
                });
            }
            Op::Add { a, b, broadcast } => {
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g)
                });
                let cols = y.cols();
                self.accumulate(grads, *b, |s| {
                    if *broadcast {
                        for (i, gv) in g.iter().enumerate() {
                            s[i % cols] += gv;
                        }
                    } else {
                        s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g)
                });
                self.accumulate(grads, *b, |s| {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s -= g)
                });
            }
            Op::Hadamard { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale { a, c } => {
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)
                });
            }
            Op::MulScalar { s: sv, a } => {
                let c = self.value(*sv).item();
                let av = self.value(*a).data();
                self.accumulate(grads, *sv, |s| {
                    s[0] += g.iter().zip(av).map(|(g, a)| g * a).sum::<f64>()
                });
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)
                });
            }
            Op::Prelu { x, slope } => {
                let xv = self.value(*x).data();
                let sl = self.value(*slope).data();
                let cols = y.cols();
                self.accumulate(grads, *x, |s| {
                    for i in 0..s.len() {
                        s[i] += if xv[i] > 0.0 {
                            g[i]
                        } else {
                            sl[i % cols] * g[i]
                        };
                    }
                });
                self.accumulate(grads, *slope, |s| {
                    for i in 0..g.len() {
                        if xv[i] <= 0.0 {
                            s[i % cols] += g[i] * xv[i];
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = y.data();
                self.accumulate(grads, *x, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::Tanh { x } => {
                let yv = y.data();
                self.accumulate(grads, *x, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (1.0 - yv[i] * yv[i]);
                    }
                });
            }
            Op::Softplus { x } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * sigmoid(xv[i]);
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let cols = y.cols();
                self.accumulate(grads, *x, |s| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            s[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::ColwiseStandardize { x, inv_std } => {
                let (n, d) = y.shape();
                let mut sum_g = vec![0.0; d];
                let mut sum_gy = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        sum_g[c] += g[r * d + c];
                        sum_gy[c] += g[r * d + c] * y.get(r, c);
                    }
                }
                let nf = n as f64;
                self.accumulate(grads, *x, |s| {
                    for r in 0..n {
                        for c in 0..d {
                            let i = r * d + c;
                            s[i] +=
                                inv_std[c] / nf * (nf * g[i] - sum_g[c] - y.get(r, c) * sum_gy[c]);
                        }
                    }
                });
            }
            Op::MeanRows { x } => {
                let n = self.value(*x).rows() as f64;
                let d = y.cols();
                self.accumulate(grads, *x, |s| {
                    for (i, v) in s.iter_mut().enumerate() {
                        *v += g[i % d] / n;
                    }
                });
            }
            Op::SumAll { x } => {
                self.accumulate(grads, *x, |s| s.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::MeanAll { x } => {
                let n = self.value(*x).len() as f64;
                self.accumulate(grads, *x, |s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::ConcatCols { parts } => {
                let total = y.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.accumulate(grads, *p, |s| {
                        for r in 0..y.rows() {
                            for c in 0..w {
                                s[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows { x, index } => {
                let d = y.cols();
                self.accumulate(grads, *x, |s| {
                    for (i, &src) in index.iter().enumerate() {
                        for c in 0..d {
                            s[src * d + c] += g[i * d + c];
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let full = self.value(*x).cols();
                let w = y.cols();
                self.accumulate(grads, *x, |s| {
                    for r in 0..y.rows() {
                        for c in 0..w {
                            s[r * full + start + c] += g[r * w + c];
                        }
                    }
                });
            }
            Op::RowSums { x } => {
                let d = self.value(*x).cols();
                self.accumulate(grads, *x, |s| {
                    for (i, v) in s.iter_mut().enumerate() {
                        *v += g[i / d];
                    }
                });
            }
            Op::BinaryCrossEntropy { p, targets, lo, hi } => {
                let pv = self.value(*p).data();
                let n = targets.len() as f64;
                self.accumulate(grads, *p, |s| {
                    for i in 0..s.len() {
                        let pi = pv[i];
                        if pi > *lo && pi < *hi {
                            let t = targets[i];
                            s[i] += -g[0] * (t / pi - (1.0 - t) / (1.0 - pi)) / n;
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                rows,
                labels,
            } => {
                let lv = self.value(*logits);
                let cols = lv.cols();
                let m = rows.len() as f64;
                self.accumulate(grads, *logits, |s| {
                    for (&r, &label) in rows.iter().zip(labels) {
                        let row = lv.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for c in 0..cols {
                            let p = (row[c] - max).exp() / z;
                            let t = if c == label { 1.0 } else { 0.0 };
                            s[r * cols + c] += g[0] * (p - t) / m;
                        }
                    }
                });
            }
            Op::CorrelationPenalty { c, lambda } => {
                let cv = self.value(*c);
                let d = cv.rows();
                self.accumulate(grads, *c, |s| {
                    for i in 0..d {
                        for j in 0..d {
                            let v = cv.get(i, j);
                            s[i * d + j] += g[0]
                                * if i == j {
                                    -2.0 * (1.0 - v)
                                } else {
                                    2.0 * lambda * v
                                };
                        }
                    }
                });
            }
        }
    }
}

impl Tensor {
    pub(crate) fn clone_without_grad(&self) -> Tensor {
        let mut t = Tensor::from_raw(self.rows(), self.cols(), self.data().to_vec());
        t.clear_grad();
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndauto::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
    {
        let report = grad_check(store, f, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 3));
        let y = tape.sigmoid(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn spmm_with_identity_is_identity() {
        let mut tape = Tape::new();
        let m = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let x = tape.constant(m.clone());
        let y = tape.spmm(&Arc::new(SparseMatrix::identity(3)), x).unwrap();
        assert_eq!(tape.value(y), &m);
    }

    #[test]
    fn standardize_uses_population_variance() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0], [2.0], [3.0]]).unwrap());
        let y = tape.colwise_standardize(x).unwrap();
        let s = (2.0f64 / 3.0 + STANDARDIZE_EPS).sqrt();
        let got = tape.value(y).data();
        approx::assert_abs_diff_eq!(got[0], -1.0 / s, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(got[1], 0.0, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(got[2], 1.0 / s, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(got[2], 1.2247, epsilon = 1e-4);
    }

    #[test]
    fn square_sum_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.hadamard(wv, wv).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn mean_sigmoid_gradient_at_zero() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::zeros(1, 4));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let s = tape.sigmoid(xv).unwrap();
        let loss = tape.mean_all(s).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store
            .get(x)
            .grad()
            .unwrap()
            .iter()
            .all(|&g| (g - 0.25 / 4.0).abs() < 1e-15));
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(3.0));
        let unused = store.add("unused", Tensor::zeros(2, 2));
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let loss = tape.scale(u, 2.0).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(used).grad().unwrap(), &[2.0]);
        assert_eq!(store.get(unused).grad().unwrap(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(2, 2));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        assert!(matches!(
            tape.backward(wv, &mut store),
            Err(Error::NotScalar { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            tape.matmul(a, b),
            Err(Error::Dimension { op: "matmul", .. })
        ));
        let big = tape.constant(Tensor::full(1, 1, 1e300));
        let sq = tape.hadamard(big, big);
        assert!(matches!(sq, Err(Error::NonFinite { op: "hadamard" })));
    }

    #[test]
    fn parameter_leaf_is_cached() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0));
        let mut tape = Tape::new();
        assert_eq!(tape.param(&store, w), tape.param(&store, w));
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn gradcheck_dense_ops() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::uniform(3, 4, 1.0, &mut r));
        let b = store.add("b", Tensor::uniform(4, 2, 1.0, &mut r));
        let c = store.add("c", Tensor::uniform(5, 4, 1.0, &mut r));
        let bias = store.add("bias", Tensor::uniform(1, 2, 1.0, &mut r));
        check(&mut store, |t, s| {
            let (a, b, c, bias) = (
                t.param(s, a),
                t.param(s, b),
                t.param(s, c),
                t.param(s, bias),
            );
            let ab = t.matmul(a, b)?;
            let ab = t.add(ab, bias)?;
            let ab = t.tanh(ab)?;
            let ac = t.matmul_nt(a, c)?; // 3x5
            let ca = t.matmul_tn(c, c)?; // 4x4
            let x = t.matmul(ac, c)?; // 3x4
            let y = t.matmul(x, ca)?;
            let y = t.scale(y, 0.1)?;
            let y = t.sigmoid(y)?;
            let p = t.mean_all(y)?;
            let q = t.sum_all(ab)?;
            let pq = t.mul_scalar(p, q)?;
            let r = t.sub(pq, p)?;
            t.hadamard(r, r)
        });
    }

    #[test]
    fn gradcheck_rowwise_ops() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::uniform(6, 3, 2.0, &mut r));
        let slope = store.add("slope", Tensor::full(1, 3, 0.25));
        let y = store.add("y", Tensor::uniform(6, 2, 2.0, &mut r));
        check(&mut store, |t, s| {
            let (x, slope, y) = (t.param(s, x), t.param(s, slope), t.param(s, y));
            let h = t.prelu(x, slope)?;
            let cat = t.concat_cols(&[h, y])?;
            let sm = t.softmax_rows(cat)?;
            let sp = t.softplus(cat)?;
            let sl = t.slice_cols(sp, 1, 3)?;
            let g = t.gather_rows(sl, &[0, 3, 3, 5])?;
            let g2 = t.slice_rows(sm, 1, 4)?;
            let g2 = t.slice_cols(g2, 0, 3)?;
            let prod = t.hadamard(g, g2)?;
            let rs = t.row_sums(prod)?;
            let mr = t.mean_rows(sm)?;
            let a = t.sum_all(rs)?;
            let b = t.sum_all(mr)?;
            let ab = t.hadamard(a, b)?;
            let z = t.standardize_and_sum(x)?;
            t.add(ab, z)
        });
    }

    impl Tape {
        // weighted sum of a standardized tensor, so the gradient is non-trivial
        fn standardize_and_sum(&mut self, x: Var) -> Result<Var> {
            let z = self.colwise_standardize(x)?;
            let n = self.value(z).rows();
            let w = Tensor::from_raw(
                n,
                self.value(z).cols(),
                (0..self.value(z).len())
                    .map(|i| ((i * 7) % 5) as f64 - 2.0)
                    .collect(),
            );
            let w = self.constant(w);
            let p = self.hadamard(z, w)?;
            let p = self.hadamard(p, p)?;
            self.sum_all(p)
        }
    }

    #[test]
    fn gradcheck_sparse_ops() {
        let mut r = rng();
        let pattern = Arc::new(
            SparseMatrix::from_triplets(
                4,
                4,
                &[
                    (0, 0, 1.0),
                    (0, 1, 1.0),
                    (1, 0, 1.0),
                    (1, 1, 1.0),
                    (1, 3, 2.0),
                    (2, 2, 1.0),
                    (3, 1, 2.0),
                    (3, 3, 1.0),
                    (3, 2, 0.5),
                ],
            )
            .unwrap(),
        );
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            Tensor::new(9, 1, (0..9).map(|i| 0.5 + 0.1 * i as f64).collect()).unwrap(),
        );
        let h = store.add("h", Tensor::uniform(4, 3, 1.0, &mut r));
        let p = Arc::clone(&pattern);
        check(&mut store, move |t, s| {
            let (w, h) = (t.param(s, w), t.param(s, h));
            let v = t.sym_norm_values(&p, w)?;
            let y = t.spmm_values(&p, v, h)?;
            let y2 = t.spmm(&p, y)?;
            let y2 = t.tanh(y2)?;
            t.sum_all(y2)
        });
    }

    #[test]
    fn gradcheck_losses() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::uniform(5, 1, 3.0, &mut r));
        let logits = store.add("logits", Tensor::uniform(5, 3, 2.0, &mut r));
        let c = store.add("c", Tensor::uniform(3, 3, 1.0, &mut r));
        check(&mut store, |t, s| {
            let (p, logits, c) = (t.param(s, p), t.param(s, logits), t.param(s, c));
            let prob = t.sigmoid(p)?;
            let bce = t.binary_cross_entropy(prob, &[1.0, 0.0, 1.0, 1.0, 0.0], 1e-7)?;
            let ce = t.cross_entropy(logits, &[0, 2, 4], &[1, 0, 2])?;
            let cp = t.correlation_penalty(c, 0.3)?;
            let a = t.add(bce, ce)?;
            t.add(a, cp)
        });
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_c() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(4, 3));
        let ce = tape.cross_entropy(l, &[0, 1, 2], &[0, 1, 2]).unwrap();
        approx::assert_abs_diff_eq!(tape.value(ce).item(), 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn sym_norm_two_node_clique_is_half() {
        let pattern = Arc::new(
            SparseMatrix::from_triplets(
                2,
                2,
                &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
            )
            .unwrap(),
        );
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::full(4, 1, 1.0));
        let v = tape.sym_norm_values(&pattern, w).unwrap();
        assert_eq!(tape.value(v).data(), &[0.5; 4]);
    }
}
