//! GCN encoders and the learnable β-weighted sum of layer adjacencies.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Edge, MultiplexGraph};
use crate::ndauto::{ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// Input node features: a tape value or a constant sparse matrix.
#[derive(Clone, Copy)]
pub enum NodeInput<'a> {
    Dense(Var),
    Sparse(&'a Arc<SparseMatrix>),
}

/// Stack of `H <- PReLU(A H W)` layers without bias.
#[derive(Clone, Debug)]
pub struct GcnEncoder {
    weights: Vec<ParamId>,
    slopes: Vec<ParamId>,
    dims: Vec<usize>,
}

impl GcnEncoder {
    /// `dims = [d_in, d_1, ..., d_out]`; Glorot weights, slopes at 0.25.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an encoder needs at least one layer");
        let mut weights = Vec::new();
        let mut slopes = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            weights.push(store.add(format!("{name}.w{i}"), Tensor::glorot(w[0], w[1], rng)));
            slopes.push(store.add(
                format!("{name}.prelu{i}"),
                Tensor::full(1, w[1], PRELU_INIT),
            ));
        }
        GcnEncoder {
            weights,
            slopes,
            dims: dims.to_vec(),
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn weight(&self, layer: usize) -> ParamId {
        self.weights[layer]
    }

    pub fn slope(&self, layer: usize) -> ParamId {
        self.slopes[layer]
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.slopes).copied().collect()
    }

    /// Runs every layer with a fixed propagation matrix.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        adj: &Arc<SparseMatrix>,
        input: NodeInput<'_>,
    ) -> Result<Var> {
        self.forward_with(tape, store, input, |tape, hw| tape.spmm(adj, hw))
    }

    /// Runs every layer with a caller-supplied aggregation `A * (H W)`.
    pub fn forward_with<F>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: NodeInput<'_>,
        mut aggregate: F,
    ) -> Result<Var>
    where
        F: FnMut(&mut Tape, Var) -> Result<Var>,
    {
        let mut h = None;
        for (i, (&w, &slope)) in self.weights.iter().zip(&self.slopes).enumerate() {
            let wv = tape.param(store, w);
            let hw = match (i, input, h) {
                (0, NodeInput::Dense(x), _) => tape.matmul(x, wv)?,
                (0, NodeInput::Sparse(x), _) => tape.spmm(x, wv)?,
                (_, _, Some(prev)) => tape.matmul(prev, wv)?,
                _ => unreachable!(),
            };
            let agg = aggregate(tape, hw)?;
            let sv = tape.param(store, slope);
            h = Some(tape.prelu(agg, sv)?);
        }
        Ok(h.expect("at least one layer"))
    }

    /// Untracked forward pass returning the embeddings.
    pub fn embed(
        &self,
        store: &ParamStore,
        adj: &Arc<SparseMatrix>,
        features: &Arc<SparseMatrix>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let z = self.forward(&mut tape, store, adj, NodeInput::Sparse(features))?;
        Ok(tape.value(z).clone())
    }
}

/// `gcn_forward` on dense inputs.
pub fn gcn_forward(
    enc: &GcnEncoder,
    tape: &mut Tape,
    store: &ParamStore,
    adj: &Arc<SparseMatrix>,
    h_in: Var,
) -> Result<Var> {
    let rows = tape.value(h_in).rows();
    if rows != adj.rows() {
        return Err(Error::dim(
            "gcn_forward",
            format!("{rows} input rows for a {}-node adjacency", adj.rows()),
        ));
    }
    enc.forward(tape, store, adj, NodeInput::Dense(h_in))
}

/// One encoder per layer: `Z_k = enc_k(A_k, X)`.
pub fn encode_layerwise(
    encoders: &[GcnEncoder],
    tape: &mut Tape,
    store: &ParamStore,
    adjs: &[Arc<SparseMatrix>],
    input: NodeInput<'_>,
) -> Result<Vec<Var>> {
    if encoders.len() != adjs.len() {
        return Err(Error::dim(
            "encode_layerwise",
            format!("{} encoders for {} layers", encoders.len(), adjs.len()),
        ));
    }
    encoders
        .iter()
        .zip(adjs)
        .map(|(enc, adj)| enc.forward(tape, store, adj, input))
        .collect()
}

fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// One trainable scalar per layer; the effective weight is `softplus(raw)`.
#[derive(Clone, Debug)]
pub struct BetaWeights {
    raw: ParamId,
    k: usize,
}

impl BetaWeights {
    /// All effective weights start at `init` (> 0).
    pub fn new(store: &mut ParamStore, k: usize, init: f64) -> Self {
        assert!(init > 0.0, "softplus weights are positive");
        let raw = store.add("beta.raw", Tensor::full(1, k, softplus_inverse(init)));
        BetaWeights { raw, k }
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn raw(&self) -> ParamId {
        self.raw
    }

    /// Current effective (softplus) weights.
    pub fn effective(&self, store: &ParamStore) -> Vec<f64> {
        let mut tape = Tape::new();
        let raw = tape.param(store, self.raw);
        let sp = tape.softplus(raw).expect("softplus of finite params");
        tape.value(sp).data().to_vec()
    }

    pub fn var(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var> {
        let raw = tape.param(store, self.raw);
        tape.softplus(raw)
    }
}

/// Sparsity pattern of `A_1 + ... + A_K + I` with each entry's per-layer
/// edge multiplicity, so β-weighted adjacencies can be rebuilt on a tape.
#[derive(Clone, Debug)]
pub struct MultiplexPattern {
    pattern: Arc<SparseMatrix>,
    /// `nnz x K` multiplicity of each stored entry in each layer.
    multiplicity: Tensor,
    /// `nnz x 1`, 1 on the diagonal.
    self_loops: Tensor,
}

impl MultiplexPattern {
    pub fn new(g: &MultiplexGraph) -> Result<Self> {
        let n = g.num_nodes();
        let k = g.num_layers();
        let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 0.0)).collect();
        for layer in g.layers() {
            triplets.extend(layer.edges.iter().map(|&(u, v)| (u, v, 0.0)));
        }
        let pattern = SparseMatrix::from_triplets(n, n, &triplets)?;
        let mut multiplicity = Tensor::zeros(pattern.nnz(), k);
        let position = |u: usize, v: usize| {
            let start = pattern.row_ptr()[u];
            start
                + pattern.col_idx()[start..pattern.row_ptr()[u + 1]]
                    .binary_search(&v)
                    .expect("edge in pattern")
        };
        for (li, layer) in g.layers().iter().enumerate() {
            for &(u, v) in &layer.edges {
                let e = position(u, v);
                multiplicity.set(e, li, multiplicity.get(e, li) + 1.0);
            }
        }
        let mut self_loops = Tensor::zeros(pattern.nnz(), 1);
        for i in 0..n {
            self_loops.set(position(i, i), 0, 1.0);
        }
        Ok(MultiplexPattern {
            pattern: Arc::new(pattern),
            multiplicity,
            self_loops,
        })
    }

    pub fn pattern(&self) -> &Arc<SparseMatrix> {
        &self.pattern
    }

    pub fn num_layers(&self) -> usize {
        self.multiplicity.cols()
    }

    /// Unnormalized entry weights `sum_k C_ek * beta_k` (self-loops excluded).
    pub fn edge_weights(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.num_layers() {
            return Err(Error::dim(
                "mhgcn",
                format!("{} weights for {} layers", beta.len(), self.num_layers()),
            ));
        }
        let b = Tensor::from_raw(beta.len(), 1, beta.to_vec());
        Ok(self.multiplicity.matmul(&b)?.into_data())
    }

    /// Normalized propagation values (`nnz x 1`) on a tape, differentiable in β.
    pub fn propagation(&self, tape: &mut Tape, beta: Var) -> Result<Var> {
        let c = tape.constant(self.multiplicity.clone());
        let w = tape.matmul_nt(c, beta)?;
        let loops = tape.constant(self.self_loops.clone());
        let w = tape.add(w, loops)?;
        tape.sym_norm_values(&self.pattern, w)
    }
}

/// Normalized β-weighted adjacency: each node pair weighs the sum of the β of
/// every layer edge joining it (multiplicity counts), then self-loops are
/// added and the result is symmetrically normalized.
pub fn mhgcn_propagation(g: &MultiplexGraph, beta: &[f64]) -> Result<SparseMatrix> {
    if beta.len() != g.num_layers() {
        return Err(Error::dim(
            "mhgcn",
            format!("{} weights for {} layers", beta.len(), g.num_layers()),
        ));
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut weights = Vec::new();
    for (layer, &b) in g.layers().iter().zip(beta) {
        edges.extend_from_slice(&layer.edges);
        weights.extend(std::iter::repeat_n(b, layer.len()));
    }
    normalize_adjacency(&edges, g.num_nodes(), Some(&weights))
}
