use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{EmbFuser, EmbLoss, GnnBase, GnnFuser, RunConfig};
use crate::encoder::{BetaWeights, GcnEncoder, MultiplexPattern, NodeInput};
use crate::error::{Error, Result};
use crate::eval::{labels_of, macro_f1, EvalConfig, LogReg, LogRegConfig, MeanStd};
use crate::fusion::{vote, AttentionFuser, ConcatLinearFuser, LookupFuser, VoteMode};
use crate::graph::{
    corruption_permutation, flatten, layer_adjacency, normalize_adjacency, Edge, MultiplexGraph,
    Split,
};
use crate::ndauto::{Adam, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::objective::{
    barlow_twins_loss, cross_entropy_loss, dgi_loss, link_prediction_loss, mse_loss, BtConfig,
    DgiHead, NegativeSampler,
};

/// Independent generator for one component of a run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-epoch losses of one optimization stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub stage: String,
    pub losses: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl LossCurve {
    pub fn best(&self) -> f64 {
        self.losses[self.best_epoch]
    }
}

/// Runs Adam for up to `epochs` steps, stopping once the loss has not
/// improved for `patience` epochs, and leaves the best parameters in `store`.
pub fn optimize<F>(
    store: &mut ParamStore,
    opt: &mut Adam,
    epochs: usize,
    patience: usize,
    stage: &str,
    mut step: F,
) -> Result<LossCurve>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let diverged = |epoch: usize| Error::Divergence {
        epoch,
        stage: stage.to_string(),
    };
    let mut curve = LossCurve {
        stage: stage.to_string(),
        ..LossCurve::default()
    };
    let mut best = f64::INFINITY;
    let mut best_params = store.snapshot();
    let mut stale = 0;
    for epoch in 0..epochs {
        let mut tape = Tape::new();
        let loss = match step(&mut tape, store) {
            Err(Error::NonFinite { .. }) => return Err(diverged(epoch)),
            other => other?,
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(diverged(epoch));
        }
        curve.losses.push(value);
        if value < best {
            best = value;
            best_params = store.snapshot();
            curve.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                curve.stopped_early = true;
                break;
            }
        }
        match tape.backward(loss, store) {
            Err(Error::NonFinite { .. }) => return Err(diverged(epoch)),
            other => other?,
        }
        opt.step(store)?;
        if store.ids().any(|id| !store.get(id).all_finite()) {
            return Err(diverged(epoch));
        }
    }
    store.restore(&best_params);
    Ok(curve)
}

fn encoder_dims(d_in: usize, cfg: &RunConfig) -> Vec<usize> {
    let mut dims = vec![d_in];
    dims.extend(std::iter::repeat_n(cfg.d, cfg.depth));
    dims
}

fn corrupted(features: &Arc<SparseMatrix>, rng: &mut ChaCha8Rng) -> Arc<SparseMatrix> {
    let perm = corruption_permutation(features.rows(), rng);
    Arc::new(features.permute_rows(&perm))
}

/// Encoder plus bilinear discriminator on a single graph.
#[derive(Clone, Debug)]
pub struct DgiModel {
    pub encoder: GcnEncoder,
    pub head: DgiHead,
}

impl DgiModel {
    pub fn new(store: &mut ParamStore, d_in: usize, cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Self {
        let encoder = GcnEncoder::new(store, "enc", &encoder_dims(d_in, cfg), rng);
        let head = DgiHead::new(store, "dgi", cfg.d, rng);
        DgiModel { encoder, head }
    }

    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        adj: &Arc<SparseMatrix>,
        x: &Arc<SparseMatrix>,
        x_corrupt: &Arc<SparseMatrix>,
    ) -> Result<Var> {
        let zp = self
            .encoder
            .forward(tape, store, adj, NodeInput::Sparse(x))?;
        let zn = self
            .encoder
            .forward(tape, store, adj, NodeInput::Sparse(x_corrupt))?;
        dgi_loss(&self.head, tape, store, zp, zn)
    }
}

/// Trains DGI on one propagation matrix; `stream` selects the generator.
pub fn train_dgi(
    adj: &Arc<SparseMatrix>,
    features: &Arc<SparseMatrix>,
    cfg: &RunConfig,
    stream: u64,
    stage: &str,
) -> Result<(Tensor, LossCurve)> {
    let mut rng = stream_rng(cfg.seed, stream);
    let mut store = ParamStore::new();
    let model = DgiModel::new(&mut store, features.cols(), cfg, &mut rng);
    let mut opt = Adam::new(cfg.lr);
    let curve = optimize(
        &mut store,
        &mut opt,
        cfg.epochs,
        cfg.patience,
        stage,
        |tape, store| {
            let xc = corrupted(features, &mut rng);
            model.loss(tape, store, adj, features, &xc)
        },
    )?;
    Ok((model.encoder.embed(&store, adj, features)?, curve))
}

/// Frozen per-layer embeddings, in layer order.
#[derive(Clone, Debug)]
pub struct LayerEmbeddings {
    pub names: Vec<String>,
    pub embeddings: Vec<Tensor>,
    pub curves: Vec<LossCurve>,
}

/// One independent DGI model per layer.
pub fn train_per_layer_dgi(g: &MultiplexGraph, cfg: &RunConfig) -> Result<LayerEmbeddings> {
    let mut out = LayerEmbeddings {
        names: Vec::new(),
        embeddings: Vec::new(),
        curves: Vec::new(),
    };
    for (k, adj) in layer_adjacency(g)?.into_iter().enumerate() {
        let (z, curve) = train_dgi(
            &adj.matrix,
            g.feature_csr(),
            cfg,
            k as u64,
            &format!("dgi/{}", adj.name),
        )?;
        out.names.push(adj.name);
        out.embeddings.push(z);
        out.curves.push(curve);
    }
    Ok(out)
}

/// DGI on the union of all layers. With one layer this is exactly the
/// per-layer model of that layer.
pub fn train_flattened_dgi(g: &MultiplexGraph, cfg: &RunConfig) -> Result<(Tensor, LossCurve)> {
    let flat = flatten(g);
    let adj = Arc::new(normalize_adjacency(
        &flat.layers()[0].edges,
        g.num_nodes(),
        None,
    )?);
    train_dgi(&adj, g.feature_csr(), cfg, 0, "dgi/flattened")
}

/// Output of the supervised GCN baseline.
#[derive(Clone, Debug)]
pub struct SupervisedGcn {
    /// Hidden representation used as the embedding.
    pub embeddings: Tensor,
    pub logits: Tensor,
    pub curve: LossCurve,
}

impl SupervisedGcn {
    pub fn accuracy(&self, labels: &[Option<usize>], nodes: &[usize]) -> Result<f64> {
        let truth = labels_of(labels, nodes)?;
        let hits = nodes
            .iter()
            .zip(&truth)
            .filter(|(&i, &y)| crate::fusion::argmax(self.logits.row(i)) == y)
            .count();
        Ok(hits as f64 / nodes.len().max(1) as f64)
    }
}

/// Two-layer GCN on the flattened graph, trained with cross-entropy on the
/// training split.
pub fn train_supervised_gcn(
    g: &MultiplexGraph,
    split: &Split,
    cfg: &RunConfig,
) -> Result<SupervisedGcn> {
    let labels = g
        .labels()
        .ok_or(Error::MissingLabels("supervised training"))?;
    let flat = flatten(g);
    let adj = Arc::new(normalize_adjacency(
        &flat.layers()[0].edges,
        g.num_nodes(),
        None,
    )?);
    let mut rng = stream_rng(cfg.seed, 0);
    let mut store = ParamStore::new();
    let encoder = GcnEncoder::new(
        &mut store,
        "enc",
        &encoder_dims(g.feature_dim(), cfg),
        &mut rng,
    );
    let w_out = store.add("out.w", Tensor::glorot(cfg.d, g.num_classes(), &mut rng));
    let x = g.feature_csr();
    let forward = |tape: &mut Tape, store: &ParamStore| -> Result<(Var, Var)> {
        let h = encoder.forward(tape, store, &adj, NodeInput::Sparse(x))?;
        let w = tape.param(store, w_out);
        let hw = tape.matmul(h, w)?;
        Ok((h, tape.spmm(&adj, hw)?))
    };
    let mut opt = Adam::new(cfg.lr);
    let curve = optimize(
        &mut store,
        &mut opt,
        cfg.epochs,
        cfg.patience,
        "supervised-gcn",
        |tape, store| {
            let (_, logits) = forward(tape, store)?;
            cross_entropy_loss(tape, logits, labels, &split.train)
        },
    )?;
    let mut tape = Tape::new();
    let (h, logits) = forward(&mut tape, &store)?;
    Ok(SupervisedGcn {
        embeddings: tape.value(h).clone(),
        logits: tape.value(logits).clone(),
        curve,
    })
}

/// GCN over the β-weighted sum of layer adjacencies, trained by link
/// prediction on the flattened edges.
#[derive(Clone, Debug)]
pub struct MhgcnModel {
    pub pattern: MultiplexPattern,
    pub beta: BetaWeights,
    pub encoder: GcnEncoder,
}

impl MhgcnModel {
    pub fn new(
        store: &mut ParamStore,
        g: &MultiplexGraph,
        cfg: &RunConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(MhgcnModel {
            pattern: MultiplexPattern::new(g)?,
            beta: BetaWeights::new(store, g.num_layers(), 1.0),
            encoder: GcnEncoder::new(store, "enc", &encoder_dims(g.feature_dim(), cfg), rng),
        })
    }

    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, x: &Arc<SparseMatrix>) -> Result<Var> {
        let beta = self.beta.var(tape, store)?;
        let values = self.pattern.propagation(tape, beta)?;
        let pattern = self.pattern.pattern();
        self.encoder
            .forward_with(tape, store, NodeInput::Sparse(x), |tape, hw| {
                tape.spmm_values(pattern, values, hw)
            })
    }

    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Arc<SparseMatrix>,
        pos: &[Edge],
        neg: &[Edge],
    ) -> Result<Var> {
        let z = self.embed(tape, store, x)?;
        link_prediction_loss(tape, z, pos, neg)
    }
}

#[derive(Clone, Debug)]
pub struct MhgcnResult {
    pub embeddings: Tensor,
    /// Effective layer weights after training.
    pub beta: Vec<f64>,
    pub curve: LossCurve,
}

/// Negatives are resampled every epoch, one per positive edge.
pub fn train_mhgcn(g: &MultiplexGraph, cfg: &RunConfig) -> Result<MhgcnResult> {
    let mut rng = stream_rng(cfg.seed, 0);
    let mut store = ParamStore::new();
    let model = MhgcnModel::new(&mut store, g, cfg, &mut rng)?;
    let pos: Vec<Edge> = g
        .layers()
        .iter()
        .flat_map(|l| l.edges.iter().copied())
        .collect();
    let sampler = NegativeSampler::new(g.num_nodes(), &pos);
    let x = g.feature_csr();
    let mut opt = Adam::new(cfg.lr);
    let curve = optimize(
        &mut store,
        &mut opt,
        cfg.epochs,
        cfg.patience,
        "mhgcn",
        |tape, store| {
            let neg = sampler.sample(pos.len(), &mut rng)?;
            model.loss(tape, store, x, &pos, &neg)
        },
    )?;
    let mut tape = Tape::new();
    let z = model.embed(&mut tape, &store, x)?;
    Ok(MhgcnResult {
        embeddings: tape.value(z).clone(),
        beta: model.beta.effective(&store),
        curve,
    })
}

/// Trainable fuser inside a GNN-level model.
#[derive(Clone, Debug)]
pub enum GnnFusion {
    Att(AttentionFuser),
    Cl(ConcatLinearFuser),
}

impl GnnFusion {
    /// Fused embedding and, for attention, the `1 x K` weights.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        zs: &[Var],
    ) -> Result<(Var, Option<Var>)> {
        match self {
            GnnFusion::Att(f) => f.fuse(tape, store, zs).map(|(z, a)| (z, Some(a))),
            GnnFusion::Cl(f) => f.fuse(tape, store, zs).map(|z| (z, None)),
        }
    }
}

/// Per-layer encoders and a fuser trained jointly.
#[derive(Clone, Debug)]
pub struct GnnLevelModel {
    pub base: GnnBase,
    pub encoders: Vec<GcnEncoder>,
    pub fusion: GnnFusion,
    /// One head per layer plus one for the fused embedding (DGI only).
    pub heads: Vec<DgiHead>,
    pub bt: BtConfig,
}

impl GnnLevelModel {
    pub fn new(
        store: &mut ParamStore,
        g: &MultiplexGraph,
        base: GnnBase,
        fuser: GnnFuser,
        cfg: &RunConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = g.num_layers();
        let dims = encoder_dims(g.feature_dim(), cfg);
        let encoders = g
            .layers()
            .iter()
            .map(|l| GcnEncoder::new(store, &format!("enc.{}", l.name), &dims, rng))
            .collect();
        let fusion = match fuser {
            GnnFuser::Att => GnnFusion::Att(AttentionFuser::new(store, k, cfg.d, cfg.att_dim, rng)),
            GnnFuser::Cl => GnnFusion::Cl(ConcatLinearFuser::new(store, k, cfg.d, rng)),
        };
        let heads = match base {
            GnnBase::Dgi => (0..=k)
                .map(|i| DgiHead::new(store, &format!("dgi{i}"), cfg.d, rng))
                .collect(),
            GnnBase::Gbt => Vec::new(),
        };
        GnnLevelModel {
            base,
            encoders,
            fusion,
            heads,
            bt: cfg.bt(),
        }
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        adjs: &[Arc<SparseMatrix>],
        x: &Arc<SparseMatrix>,
    ) -> Result<Vec<Var>> {
        crate::encoder::encode_layerwise(&self.encoders, tape, store, adjs, NodeInput::Sparse(x))
    }

    /// DGI: per-layer terms plus a fused term, the fuser shared by the clean
    /// and corrupted branches. GBT: `sum_k BT(Z_k, fused)`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        adjs: &[Arc<SparseMatrix>],
        x: &Arc<SparseMatrix>,
        x_corrupt: Option<&Arc<SparseMatrix>>,
    ) -> Result<Var> {
        let zs = self.encode(tape, store, adjs, x)?;
        let (fused, _) = self.fusion.fuse(tape, store, &zs)?;
        let mut terms = Vec::with_capacity(zs.len() + 1);
        match self.base {
            GnnBase::Dgi => {
                let xc = x_corrupt
                    .ok_or_else(|| Error::Config("DGI needs corrupted features".into()))?;
                let zn = self.encode(tape, store, adjs, xc)?;
                let (fused_n, _) = self.fusion.fuse(tape, store, &zn)?;
                for (k, (&p, &n)) in zs.iter().zip(&zn).enumerate() {
                    terms.push(dgi_loss(&self.heads[k], tape, store, p, n)?);
                }
                terms.push(dgi_loss(
                    &self.heads[zs.len()],
                    tape,
                    store,
                    fused,
                    fused_n,
                )?);
            }
            GnnBase::Gbt => {
                for &z in &zs {
                    terms.push(barlow_twins_loss(tape, z, fused, self.bt)?);
                }
            }
        }
        sum(tape, &terms)
    }
}

fn sum(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct FusedEmbeddings {
    pub fused: Tensor,
    pub layers: Vec<Tensor>,
    pub alpha: Option<Vec<f64>>,
    pub curve: LossCurve,
}

pub fn train_gnn_level(
    g: &MultiplexGraph,
    base: GnnBase,
    fuser: GnnFuser,
    cfg: &RunConfig,
) -> Result<FusedEmbeddings> {
    let mut rng = stream_rng(cfg.seed, 0);
    let mut store = ParamStore::new();
    let model = GnnLevelModel::new(&mut store, g, base, fuser, cfg, &mut rng);
    let adjs: Vec<Arc<SparseMatrix>> = layer_adjacency(g)?.into_iter().map(|a| a.matrix).collect();
    let x = g.feature_csr();
    let mut opt = Adam::new(cfg.lr);
    let stage = format!("gnn-level/{}", cfg.method);
    let curve = optimize(
        &mut store,
        &mut opt,
        cfg.epochs,
        cfg.patience,
        &stage,
        |tape, store| {
            let xc = (base == GnnBase::Dgi).then(|| corrupted(x, &mut rng));
            model.loss(tape, store, &adjs, x, xc.as_ref())
        },
    )?;
    let mut tape = Tape::new();
    let zs = model.encode(&mut tape, &store, &adjs, x)?;
    let (fused, alpha) = model.fusion.fuse(&mut tape, &store, &zs)?;
    Ok(FusedEmbeddings {
        fused: tape.value(fused).clone(),
        layers: zs.iter().map(|&z| tape.value(z).clone()).collect(),
        alpha: alpha.map(|a| tape.value(a).data().to_vec()),
        curve,
    })
}

/// Trainable fuser over frozen embeddings.
#[derive(Clone, Debug)]
pub enum EmbFusion {
    Att(AttentionFuser),
    Cl(ConcatLinearFuser),
    Lookup(LookupFuser),
}

impl EmbFusion {
    pub fn new(
        store: &mut ParamStore,
        kind: EmbFuser,
        k: usize,
        n: usize,
        d: usize,
        att_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        match kind {
            EmbFuser::Att => EmbFusion::Att(AttentionFuser::new(store, k, d, att_dim, rng)),
            EmbFuser::Cl => EmbFusion::Cl(ConcatLinearFuser::new(store, k, d, rng)),
            EmbFuser::Lookup => EmbFusion::Lookup(LookupFuser::new(store, n, d, rng)),
        }
    }

    pub fn fuse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        zs: &[Var],
    ) -> Result<(Var, Option<Var>)> {
        match self {
            EmbFusion::Att(f) => f.fuse(tape, store, zs).map(|(z, a)| (z, Some(a))),
            EmbFusion::Cl(f) => f.fuse(tape, store, zs).map(|z| (z, None)),
            EmbFusion::Lookup(f) => Ok((f.fuse(tape, store), None)),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            EmbFusion::Att(f) => f.params(),
            EmbFusion::Cl(f) => vec![f.param()],
            EmbFusion::Lookup(f) => vec![f.param()],
        }
    }
}

/// `sum_k L(Z_k, fused)` over frozen inputs.
pub fn embedding_level_loss(
    tape: &mut Tape,
    store: &ParamStore,
    fusion: &EmbFusion,
    zs: &[Tensor],
    loss: EmbLoss,
    bt: BtConfig,
) -> Result<(Var, Option<Var>)> {
    let vars: Vec<Var> = zs.iter().map(|z| tape.constant(z.clone())).collect();
    let (fused, alpha) = fusion.fuse(tape, store, &vars)?;
    let mut terms = Vec::with_capacity(vars.len());
    for &z in &vars {
        terms.push(match loss {
            EmbLoss::Bt => barlow_twins_loss(tape, z, fused, bt)?,
            EmbLoss::Mse => mse_loss(tape, z, fused)?,
        });
    }
    Ok((sum(tape, &terms)?, alpha))
}

/// Trains only the fuser; the layer embeddings stay fixed.
pub fn train_embedding_level(
    zs: &[Tensor],
    fuser: EmbFuser,
    loss: EmbLoss,
    cfg: &RunConfig,
) -> Result<FusedEmbeddings> {
    let (n, d) = zs
        .first()
        .map(Tensor::shape)
        .ok_or_else(|| Error::Config("no layer embeddings".into()))?;
    let mut rng = stream_rng(cfg.seed, zs.len() as u64);
    let mut store = ParamStore::new();
    let fusion = EmbFusion::new(&mut store, fuser, zs.len(), n, d, cfg.att_dim, &mut rng);
    let bt = cfg.bt();
    let mut opt = Adam::new(cfg.fuser_lr);
    let stage = format!("embedding-level/{}", cfg.method);
    let curve = optimize(
        &mut store,
        &mut opt,
        cfg.fuser_epochs,
        cfg.patience,
        &stage,
        |tape, store| embedding_level_loss(tape, store, &fusion, zs, loss, bt).map(|(l, _)| l),
    )?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = zs.iter().map(|z| tape.constant(z.clone())).collect();
    let (fused, alpha) = fusion.fuse(&mut tape, &store, &vars)?;
    Ok(FusedEmbeddings {
        fused: tape.value(fused).clone(),
        layers: zs.to_vec(),
        alpha: alpha.map(|a| tape.value(a).data().to_vec()),
        curve,
    })
}

/// Labels voted by one logistic-regression classifier per layer.
#[allow(clippy::too_many_arguments)]
pub fn vote_predictions(
    zs: &[Tensor],
    labels: &[Option<usize>],
    num_classes: usize,
    train: &[usize],
    nodes: &[usize],
    seed: u64,
    cfg: &LogRegConfig,
    mode: VoteMode,
) -> Result<Vec<usize>> {
    let probs = zs
        .iter()
        .map(|z| LogReg::fit(z, labels, train, num_classes, seed, cfg)?.predict_proba(z, nodes))
        .collect::<Result<Vec<_>>>()?;
    vote(mode, &probs)
}

/// Test and validation Macro-F1 of voted predictions over the classifier seeds.
pub fn prediction_level(
    zs: &[Tensor],
    labels: &[Option<usize>],
    num_classes: usize,
    split: &Split,
    eval: &EvalConfig,
    mode: VoteMode,
) -> Result<(MeanStd, MeanStd)> {
    if split.test.is_empty() {
        return Err(Error::EmptySplit);
    }
    let truth_test = labels_of(labels, &split.test)?;
    let truth_val = labels_of(labels, &split.val)?;
    let mut test = Vec::new();
    let mut val = Vec::new();
    for &seed in &eval.classifier_seeds {
        let predict = |nodes: &[usize]| {
            vote_predictions(
                zs,
                labels,
                num_classes,
                &split.train,
                nodes,
                seed,
                &eval.logreg,
                mode,
            )
        };
        test.push(macro_f1(&predict(&split.test)?, &truth_test));
        if !split.val.is_empty() {
            val.push(macro_f1(&predict(&split.val)?, &truth_val));
        }
    }
    Ok((MeanStd::of(&test), MeanStd::of(&val)))
}
