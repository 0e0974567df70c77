//! Fusion operators: fixed reducers, trainable fusers, and ensemble voting.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndauto::{ParamId, ParamStore, Tape, Tensor, Var};

/// Default hidden width of the attention projection.
pub const ATTENTION_DIM: usize = 128;

/// Half-width of the uniform lookup initialization.
pub const LOOKUP_INIT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceKind {
    Mean,
    Min,
    Max,
    Sum,
    Concat,
}

impl FromStr for ReduceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => ReduceKind::Mean,
            "min" => ReduceKind::Min,
            "max" => ReduceKind::Max,
            "sum" => ReduceKind::Sum,
            "concat" => ReduceKind::Concat,
            _ => return Err(Error::Config(format!("unknown reducer `{s}`"))),
        })
    }
}

fn check_same_shapes(
    op: &'static str,
    shapes: impl Iterator<Item = (usize, usize)>,
) -> Result<(usize, usize)> {
    let mut first = None;
    for s in shapes {
        match first {
            None => first = Some(s),
            Some(f) if f != s => return Err(Error::dim(op, format!("{f:?} vs {s:?}"))),
            _ => {}
        }
    }
    first.ok_or_else(|| Error::dim(op, "no layers to fuse"))
}

/// Elementwise reduction across layers, or column concatenation in order.
pub fn fuse_reduce(kind: ReduceKind, zs: &[Tensor]) -> Result<Tensor> {
    let (n, d) = check_same_shapes("fuse_reduce", zs.iter().map(Tensor::shape))?;
    if kind == ReduceKind::Concat {
        let mut out = Tensor::zeros(n, d * zs.len());
        for r in 0..n {
            for (k, z) in zs.iter().enumerate() {
                out.row_mut(r)[k * d..(k + 1) * d].copy_from_slice(z.row(r));
            }
        }
        return Ok(out);
    }
    let mut out = zs[0].clone();
    for z in &zs[1..] {
        for (o, &v) in out.data_mut().iter_mut().zip(z.data()) {
            *o = match kind {
                ReduceKind::Min => o.min(v),
                ReduceKind::Max => o.max(v),
                _ => *o + v,
            };
        }
    }
    if kind == ReduceKind::Mean {
        let k = zs.len() as f64;
        out.data_mut().iter_mut().for_each(|v| *v /= k);
    }
    Ok(out)
}

/// Layer-level semantic attention: `w_k = mean_u q . tanh(W_a z_{k,u} + b)`,
/// `alpha = softmax(w)`, output `sum_k alpha_k Z_k`.
#[derive(Clone, Debug)]
pub struct AttentionFuser {
    w_a: ParamId,
    bias: ParamId,
    q: ParamId,
    layers: usize,
}

impl AttentionFuser {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        layers: usize,
        dim: usize,
        att_dim: usize,
        rng: &mut R,
    ) -> Self {
        AttentionFuser {
            w_a: store.add("att.w", Tensor::glorot(dim, att_dim, rng)),
            bias: store.add("att.b", Tensor::zeros(1, att_dim)),
            q: store.add("att.q", Tensor::glorot(att_dim, 1, rng)),
            layers,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_a, self.bias, self.q]
    }

    pub fn context(&self) -> ParamId {
        self.q
    }

    /// Returns `(fused, alpha)` with `alpha` a `1 x K` row.
    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore, zs: &[Var]) -> Result<(Var, Var)> {
        if zs.len() != self.layers {
            return Err(Error::dim(
                "fuse_attention",
                format!("{} inputs for {} layers", zs.len(), self.layers),
            ));
        }
        check_same_shapes("fuse_attention", zs.iter().map(|&z| tape.value(z).shape()))?;
        let w = tape.param(store, self.w_a);
        let b = tape.param(store, self.bias);
        let q = tape.param(store, self.q);
        let mut scores = Vec::with_capacity(zs.len());
        for &z in zs {
            let h = tape.matmul(z, w)?;
            let h = tape.add(h, b)?;
            let h = tape.tanh(h)?;
            let m = tape.mean_rows(h)?;
            scores.push(tape.matmul(m, q)?);
        }
        let scores = tape.concat_cols(&scores)?;
        let alpha = tape.softmax_rows(scores)?;
        let mut fused = None;
        for (k, &z) in zs.iter().enumerate() {
            let a = tape.slice_cols(alpha, k, 1)?;
            let term = tape.mul_scalar(a, z)?;
            fused = Some(match fused {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((fused.expect("at least one layer"), alpha))
    }

    /// Attention weights for fixed embeddings.
    pub fn alpha(&self, store: &ParamStore, zs: &[Tensor]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = zs.iter().map(|z| tape.constant(z.clone())).collect();
        let (_, alpha) = self.fuse(&mut tape, store, &vars)?;
        Ok(tape.value(alpha).data().to_vec())
    }
}

/// `concat(Z_1..Z_K) W` with `W` of shape `K d x d`.
#[derive(Clone, Debug)]
pub struct ConcatLinearFuser {
    w: ParamId,
    layers: usize,
}

impl ConcatLinearFuser {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        layers: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        ConcatLinearFuser {
            w: store.add("cl.w", Tensor::glorot(layers * dim, dim, rng)),
            layers,
        }
    }

    pub fn param(&self) -> ParamId {
        self.w
    }

    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore, zs: &[Var]) -> Result<Var> {
        if zs.len() != self.layers {
            return Err(Error::dim(
                "fuse_concat_linear",
                format!("fuser built for {} layers, got {}", self.layers, zs.len()),
            ));
        }
        let cat = tape.concat_cols(zs)?;
        let w = tape.param(store, self.w);
        tape.matmul(cat, w)
    }
}

/// A free `N x d` embedding table used directly as the fused output.
#[derive(Clone, Debug)]
pub struct LookupFuser {
    table: ParamId,
    num_nodes: usize,
}

impl LookupFuser {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        num_nodes: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        LookupFuser {
            table: store.add("lookup", Tensor::uniform(num_nodes, dim, LOOKUP_INIT, rng)),
            num_nodes,
        }
    }

    pub fn param(&self) -> ParamId {
        self.table
    }

    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        tape.param(store, self.table)
    }

    /// Rows for `nodes`; any id outside the trained node set is an error.
    pub fn query(&self, store: &ParamStore, nodes: &[usize]) -> Result<Tensor> {
        if let Some(&node) = nodes.iter().find(|&&v| v >= self.num_nodes) {
            return Err(Error::NotInductive {
                node,
                num_nodes: self.num_nodes,
            });
        }
        Ok(store.get(self.table).select_rows(nodes))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    Soft,
    Hard,
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Combines per-classifier class probabilities. Soft voting takes the argmax
/// of the mean probabilities; hard voting takes each classifier's argmax and
/// returns the most common label. Ties go to the lowest class id.
pub fn vote(mode: VoteMode, probs: &[Tensor]) -> Result<Vec<usize>> {
    let (n, c) = check_same_shapes("vote", probs.iter().map(Tensor::shape))?;
    for p in probs {
        for r in 0..n {
            let s: f64 = p.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::dim("vote", format!("row {r} sums to {s}, not 1")));
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = vec![0.0; c];
    for r in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in probs {
            match mode {
                VoteMode::Soft => acc.iter_mut().zip(p.row(r)).for_each(|(a, v)| *a += v),
                VoteMode::Hard => acc[argmax(p.row(r))] += 1.0,
            }
        }
        out.push(argmax(&acc));
    }
    Ok(out)
}
