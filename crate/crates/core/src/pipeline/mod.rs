//! Method dispatch: load, train, fuse, evaluate, report.

mod config;
mod train;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{EmbFuser, EmbLoss, GnnBase, GnnFuser, KnnZeroNorm, Method, RunConfig};
pub use train::{
    embedding_level_loss, optimize, prediction_level, stream_rng, train_dgi, train_embedding_level,
    train_flattened_dgi, train_gnn_level, train_mhgcn, train_per_layer_dgi, train_supervised_gcn,
    vote_predictions, DgiModel, EmbFusion, FusedEmbeddings, GnnFusion, GnnLevelModel,
    LayerEmbeddings, LossCurve, MhgcnModel, MhgcnResult, SupervisedGcn,
};

use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, EvaluationReport, CLUSTERING_SCOPE, SIMILARITY_SCOPE};
use crate::fusion::fuse_reduce;
use crate::graph::{
    build_knn_layer, load_dataset, load_splits, make_splits, MultiplexGraph, Split,
};
use crate::ndauto::Tensor;

/// Metrics of one layer's own embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer: String,
    pub metrics: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub seed: u64,
    pub split_seed: Option<u64>,
    pub classifier_seeds: Vec<u64>,
    pub kmeans_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scopes {
    pub clustering: String,
    pub similarity: String,
}

/// Everything a run records. Timing fields are the only ones that vary
/// between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub method: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: SeedInfo,
    pub layers: Vec<String>,
    pub loss_curves: Vec<LossCurve>,
    /// Attention weights, in layer order.
    pub alpha: Option<Vec<f64>>,
    /// Effective β weights, in layer order.
    pub beta: Option<Vec<f64>>,
    pub metrics: Option<EvaluationReport>,
    pub per_layer: Vec<LayerMetrics>,
    pub scopes: Scopes,
    pub wall_time_s: f64,
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub maf1: Option<f64>,
    pub maf1_std: Option<f64>,
    pub nmi: Option<f64>,
    pub nmi_std: Option<f64>,
    pub sim5: Option<f64>,
    pub wall_s: f64,
}

impl RunReport {
    /// Copy with every timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        let zero = |m: &mut EvaluationReport| m.timing_s = Default::default();
        r.metrics.iter_mut().for_each(zero);
        r.per_layer.iter_mut().for_each(|l| zero(&mut l.metrics));
        r
    }

    /// One row per evaluated embedding: the run itself, or each layer for
    /// the `layers` method (named `layers/<layer>`).
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let row = |method: String, m: &EvaluationReport| SummaryRow {
            dataset: self.dataset.clone(),
            method,
            seed: self.seeds.seed,
            maf1: m.macro_f1.map(|v| v.mean),
            maf1_std: m.macro_f1.map(|v| v.std),
            nmi: m.nmi.map(|v| v.mean),
            nmi_std: m.nmi.map(|v| v.std),
            sim5: m.sim_at_5,
            wall_s: self.wall_time_s,
        };
        match &self.metrics {
            Some(m) => vec![row(self.method.clone(), m)],
            None => self
                .per_layer
                .iter()
                .map(|l| row(format!("{}/{}", self.method, l.layer), &l.metrics))
                .collect(),
        }
    }
}

/// Report plus the embeddings it was computed from.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Final embedding; `None` for prediction-level and per-layer runs.
    pub embeddings: Option<Tensor>,
    pub layer_embeddings: Vec<Tensor>,
}

/// Loads the dataset named by `cfg`, adds a KNN layer if requested,
/// selects layers and resolves the split (`splits.json` wins).
pub fn prepare(cfg: &RunConfig) -> Result<(MultiplexGraph, Split)> {
    let mut g = load_dataset(&cfg.dataset)?;
    if let Some(k) = cfg.k_knn {
        if g.layer("KNN").is_none() {
            g = g.with_layer(build_knn_layer(&g, k, cfg.knn_zero_norm.into())?)?;
        }
    }
    if !cfg.layers.is_empty() {
        g = g.select_layers(&cfg.layers)?;
    }
    let split = resolve_split(&cfg.dataset, &g, cfg)?;
    Ok((g, split))
}

fn resolve_split(dir: &Path, g: &MultiplexGraph, cfg: &RunConfig) -> Result<Split> {
    match load_splits(dir, g)? {
        Some(s) => Ok(s),
        None => make_splits(g, cfg.split_ratios(), cfg.split_seed),
    }
}

/// Loads and runs one experiment.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let (g, split) = prepare(cfg)?;
    run_on_graph_timed(&g, &split, cfg, start)
}

/// Runs one experiment on an in-memory graph.
pub fn run_on_graph(g: &MultiplexGraph, split: &Split, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    run_on_graph_timed(g, split, cfg, Instant::now())
}

fn run_on_graph_timed(
    g: &MultiplexGraph,
    split: &Split,
    cfg: &RunConfig,
    start: Instant,
) -> Result<RunOutput> {
    let method = cfg.method()?;
    let labels = g.labels().ok_or(Error::MissingLabels("evaluation"))?;
    let classes = g.num_classes();
    let eval = cfg.eval_config();
    split.validate(g)?;
    let evaluate = |z: &Tensor| evaluate_embeddings(z, labels, classes, split, &eval);

    let mut report = RunReport {
        dataset: g.name().to_string(),
        method: method.to_string(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seeds: SeedInfo {
            seed: cfg.seed,
            split_seed: split.seed,
            classifier_seeds: eval.classifier_seeds.clone(),
            kmeans_seeds: eval.kmeans_seeds.clone(),
        },
        layers: g.layers().iter().map(|l| l.name.clone()).collect(),
        loss_curves: Vec::new(),
        alpha: None,
        beta: None,
        metrics: None,
        per_layer: Vec::new(),
        scopes: Scopes {
            clustering: CLUSTERING_SCOPE.to_string(),
            similarity: SIMILARITY_SCOPE.to_string(),
        },
        wall_time_s: 0.0,
    };
    let mut embeddings = None;
    let mut layer_embeddings = Vec::new();

    let per_layer = if method.needs_layer_embeddings() {
        let le = train_per_layer_dgi(g, cfg)?;
        report.loss_curves.extend(le.curves.iter().cloned());
        Some(le)
    } else {
        None
    };

    match method {
        Method::Layers => {
            let le = per_layer.expect("trained above");
            for (name, z) in le.names.iter().zip(&le.embeddings) {
                report.per_layer.push(LayerMetrics {
                    layer: name.clone(),
                    metrics: evaluate(z)?,
                });
            }
            layer_embeddings = le.embeddings;
        }
        Method::Features => {
            let z = g.features().clone();
            report.metrics = Some(evaluate(&z)?);
            embeddings = Some(z);
        }
        Method::FlattenedDgi => {
            let (z, curve) = train_flattened_dgi(g, cfg)?;
            report.loss_curves.push(curve);
            report.metrics = Some(evaluate(&z)?);
            embeddings = Some(z);
        }
        Method::FlattenedGcn => {
            let out = train_supervised_gcn(g, split, cfg)?;
            report.loss_curves.push(out.curve);
            report.metrics = Some(evaluate(&out.embeddings)?);
            embeddings = Some(out.embeddings);
        }
        Method::Mhgcn => {
            let out = train_mhgcn(g, cfg)?;
            report.loss_curves.push(out.curve);
            report.beta = Some(out.beta);
            report.metrics = Some(evaluate(&out.embeddings)?);
            embeddings = Some(out.embeddings);
        }
        Method::GnnLevel(base, fuser) => {
            let out = train_gnn_level(g, base, fuser, cfg)?;
            report.loss_curves.push(out.curve);
            report.alpha = out.alpha;
            report.metrics = Some(evaluate(&out.fused)?);
            embeddings = Some(out.fused);
            layer_embeddings = out.layers;
        }
        Method::EmbReduce(kind) => {
            let le = per_layer.expect("trained above");
            let z = fuse_reduce(kind, &le.embeddings)?;
            report.metrics = Some(evaluate(&z)?);
            embeddings = Some(z);
            layer_embeddings = le.embeddings;
        }
        Method::EmbTrained(fuser, loss) => {
            let le = per_layer.expect("trained above");
            let out = train_embedding_level(&le.embeddings, fuser, loss, cfg)?;
            report.loss_curves.push(out.curve);
            report.alpha = out.alpha;
            report.metrics = Some(evaluate(&out.fused)?);
            embeddings = Some(out.fused);
            layer_embeddings = le.embeddings;
        }
        Method::Vote(mode) => {
            let le = per_layer.expect("trained above");
            let (test, val) =
                prediction_level(&le.embeddings, labels, classes, split, &eval, mode)?;
            report.metrics = Some(EvaluationReport {
                macro_f1: Some(test),
                val_macro_f1: Some(val),
                ..EvaluationReport::default()
            });
            layer_embeddings = le.embeddings;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(RunOutput {
        report,
        embeddings,
        layer_embeddings,
    })
}
