use std::path::PathBuf;

/// Errors surfaced by every layer of the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("layer `{0}` has zero edges")]
    EmptyLayer(String),

    #[error("node {node} has a zero-norm {what} row")]
    ZeroNorm { node: usize, what: &'static str },

    #[error("column {column} has zero variance")]
    ZeroVariance { column: usize },

    #[error("negative edge weight {weight} on ({u}, {v}); re-parameterize the weights (e.g. softplus) instead of clamping")]
    NegativeWeight { u: usize, v: usize, weight: f64 },

    #[error("class {class} has {count} labeled nodes; at least 3 are needed to stratify")]
    ClassTooSmall { class: usize, count: usize },

    #[error("empty evaluation split")]
    EmptySplit,

    #[error("class {class} appears in the test split but not in the training split")]
    ClassMissingFromTrain { class: usize },

    #[error("labels are required for {0}")]
    MissingLabels(&'static str),

    #[error(
        "lookup fusion is not inductive: node {node} is outside the {num_nodes} trained nodes"
    )]
    NotInductive { node: usize, num_nodes: usize },

    #[error("method `{method}` is out of scope: {note}")]
    OutOfScope { method: String, note: &'static str },

    #[error("training diverged at epoch {epoch} ({stage}): non-finite loss")]
    Divergence { epoch: usize, stage: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
