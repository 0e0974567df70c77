use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, LogRegConfig};
use crate::fusion::{ReduceKind, VoteMode, ATTENTION_DIM};
use crate::graph::{SplitRatios, ZeroNormPolicy};
use crate::objective::BtConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnnBase {
    Dgi,
    Gbt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnnFuser {
    Att,
    Cl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbFuser {
    Att,
    Cl,
    Lookup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbLoss {
    Bt,
    Mse,
}

/// Every supported run type, one per method id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Per-layer DGI, each layer evaluated on its own.
    Layers,
    /// Raw node features.
    Features,
    FlattenedGcn,
    FlattenedDgi,
    Mhgcn,
    GnnLevel(GnnBase, GnnFuser),
    EmbReduce(ReduceKind),
    EmbTrained(EmbFuser, EmbLoss),
    Vote(VoteMode),
}

const OUT_OF_SCOPE: &[(&str, &str)] = &[
    ("dw", "random-walk baselines (DeepWalk) are not implemented"),
    (
        "deepwalk",
        "random-walk baselines (DeepWalk) are not implemented",
    ),
    ("gat", "attention encoders (GAT) are not implemented"),
    (
        "flattened-gat",
        "attention encoders (GAT) are not implemented",
    ),
    (
        "dmgi",
        "DMGI as published is not reproduced; its lookup fusion is available as emb-lk-*",
    ),
    (
        "hdgi",
        "HDGI as published is not reproduced; its semantic attention is available as f-dgi-att",
    ),
    (
        "s2mgrl",
        "S2MGRL as published is not reproduced; its BT pairing is available as f-gbt-*",
    ),
];

impl Method {
    pub const ALL: &'static [&'static str] = &[
        "layers",
        "features",
        "flattened-gcn",
        "flattened-dgi",
        "mhgcn",
        "f-dgi-att",
        "f-dgi-cl",
        "f-gbt-att",
        "f-gbt-cl",
        "emb-mean",
        "emb-min",
        "emb-max",
        "emb-sum",
        "emb-concat",
        "emb-att-bt",
        "emb-att-mse",
        "emb-cl-bt",
        "emb-cl-mse",
        "emb-lk-bt",
        "emb-lk-mse",
        "vote-soft",
        "vote-hard",
    ];

    /// Whether the method trains per-layer DGI encoders first and fuses after.
    pub fn needs_layer_embeddings(self) -> bool {
        matches!(
            self,
            Method::Layers | Method::EmbReduce(_) | Method::EmbTrained(..) | Method::Vote(_)
        )
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some((_, note)) = OUT_OF_SCOPE.iter().find(|(id, _)| *id == s) {
            return Err(Error::OutOfScope {
                method: s.to_string(),
                note,
            });
        }
        let m = match s {
            "layers" => Method::Layers,
            "features" => Method::Features,
            "flattened-gcn" => Method::FlattenedGcn,
            "flattened-dgi" => Method::FlattenedDgi,
            "mhgcn" => Method::Mhgcn,
            "vote-soft" => Method::Vote(VoteMode::Soft),
            "vote-hard" => Method::Vote(VoteMode::Hard),
            _ => {
                if let Some(rest) = s.strip_prefix("f-") {
                    let (base, fuser) = rest.split_once('-').ok_or_else(|| unknown(s))?;
                    let base = match base {
                        "dgi" => GnnBase::Dgi,
                        "gbt" => GnnBase::Gbt,
                        _ => return Err(unknown(s)),
                    };
                    let fuser = match fuser {
                        "att" => GnnFuser::Att,
                        "cl" => GnnFuser::Cl,
                        _ => return Err(unknown(s)),
                    };
                    Method::GnnLevel(base, fuser)
                } else if let Some(rest) = s.strip_prefix("emb-") {
                    match rest.split_once('-') {
                        None => Method::EmbReduce(rest.parse().map_err(|_| unknown(s))?),
                        Some((fuser, loss)) => {
                            let fuser = match fuser {
                                "att" => EmbFuser::Att,
                                "cl" => EmbFuser::Cl,
                                "lk" => EmbFuser::Lookup,
                                _ => return Err(unknown(s)),
                            };
                            let loss = match loss {
                                "bt" => EmbLoss::Bt,
                                "mse" => EmbLoss::Mse,
                                _ => return Err(unknown(s)),
                            };
                            Method::EmbTrained(fuser, loss)
                        }
                    }
                } else {
                    return Err(unknown(s));
                }
            }
        };
        Ok(m)
    }
}

fn unknown(s: &str) -> Error {
    Error::Config(format!("unknown method `{s}`"))
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Layers => "layers".to_string(),
            Method::Features => "features".to_string(),
            Method::FlattenedGcn => "flattened-gcn".to_string(),
            Method::FlattenedDgi => "flattened-dgi".to_string(),
            Method::Mhgcn => "mhgcn".to_string(),
            Method::GnnLevel(b, u) => format!(
                "f-{}-{}",
                if *b == GnnBase::Dgi { "dgi" } else { "gbt" },
                if *u == GnnFuser::Att { "att" } else { "cl" }
            ),
            Method::EmbReduce(k) => format!("emb-{}", format!("{k:?}").to_lowercase()),
            Method::EmbTrained(u, l) => format!(
                "emb-{}-{}",
                match u {
                    EmbFuser::Att => "att",
                    EmbFuser::Cl => "cl",
                    EmbFuser::Lookup => "lk",
                },
                if *l == EmbLoss::Bt { "bt" } else { "mse" }
            ),
            Method::Vote(m) => format!(
                "vote-{}",
                if *m == VoteMode::Soft { "soft" } else { "hard" }
            ),
        };
        f.write_str(&s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnnZeroNorm {
    #[default]
    Reject,
    Zero,
}

impl From<KnnZeroNorm> for ZeroNormPolicy {
    fn from(v: KnnZeroNorm) -> Self {
        match v {
            KnnZeroNorm::Reject => ZeroNormPolicy::Reject,
            KnnZeroNorm::Zero => ZeroNormPolicy::ZeroSimilarity,
        }
    }
}

/// One experiment. Parsed from a flat TOML table; every key is optional
/// except `dataset` and `method`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub method: String,
    /// Layers to use, in order; empty means all.
    pub layers: Vec<String>,
    /// Build a `KNN` layer with this `k` if the dataset has none.
    pub k_knn: Option<usize>,
    pub knn_zero_norm: KnnZeroNorm,
    pub d: usize,
    pub depth: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    /// Learning rate and step budget for post-hoc embedding-level fusers.
    pub fuser_lr: f64,
    pub fuser_epochs: usize,
    pub att_dim: usize,
    /// Off-diagonal weight of the BT loss; defaults to `1 / d`.
    pub lambda_bt: Option<f64>,
    /// Extra MLP-vs-GCN BT term of the original S2MGRL; not implemented.
    pub gbt_mlp_term: bool,
    pub seed: u64,
    pub split_seed: u64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub classifier_seeds: usize,
    pub kmeans_seeds: usize,
    pub logreg_steps: usize,
    pub logreg_lr: f64,
    pub logreg_weight_decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lr = LogRegConfig::default();
        let split = SplitRatios::default();
        RunConfig {
            dataset: PathBuf::new(),
            method: String::new(),
            layers: Vec::new(),
            k_knn: None,
            knn_zero_norm: KnnZeroNorm::Reject,
            d: 64,
            depth: 1,
            epochs: 500,
            patience: 50,
            lr: 1e-3,
            fuser_lr: 1e-2,
            fuser_epochs: 500,
            att_dim: ATTENTION_DIM,
            lambda_bt: None,
            gbt_mlp_term: false,
            seed: 0,
            split_seed: 0,
            train_ratio: split.train,
            val_ratio: split.val,
            test_ratio: split.test,
            classifier_seeds: 5,
            kmeans_seeds: 10,
            logreg_steps: lr.steps,
            logreg_lr: lr.lr,
            logreg_weight_decay: lr.weight_decay,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn method(&self) -> Result<Method> {
        self.method.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("`dataset` is required".into()));
        }
        self.method()?;
        if self.gbt_mlp_term {
            return Err(Error::OutOfScope {
                method: self.method.clone(),
                note: "the MLP-vs-GCN BT term of S2MGRL is excluded",
            });
        }
        if self.epochs == 0 || self.fuser_epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.d == 0 || self.depth == 0 || self.att_dim == 0 {
            return Err(Error::Config("d, depth and att_dim must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.classifier_seeds == 0 || self.kmeans_seeds == 0 {
            return Err(Error::Config("seed counts must be >= 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("fuser_lr", self.fuser_lr),
            ("logreg_lr", self.logreg_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(l) = self.lambda_bt {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(
                    "lambda_bt must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            val: self.val_ratio,
            test: self.test_ratio,
        }
    }

    pub fn bt(&self) -> BtConfig {
        BtConfig::new(self.lambda_bt.unwrap_or(1.0 / self.d as f64))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            classifier_seeds: (0..self.classifier_seeds as u64).collect(),
            kmeans_seeds: (0..self.kmeans_seeds as u64).collect(),
            sim_k: 5,
            logreg: LogRegConfig {
                steps: self.logreg_steps,
                lr: self.logreg_lr,
                weight_decay: self.logreg_weight_decay,
                ..LogRegConfig::default()
            },
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
