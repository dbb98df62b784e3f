use std::path::PathBuf;

use crate::nn::WeightRef;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("layer index {index} out of range (model has {n_layers} layers)")]
    LayerOutOfRange { index: usize, n_layers: usize },

    #[error("weight reference {0} is out of bounds")]
    WeightOutOfBounds(WeightRef),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible drift: {0}")]
    InfeasibleDrift(String),

    #[error(
        "nothing to repair: no misclassified samples of class {target_class} in the repair split"
    )]
    NothingToRepair { target_class: usize },

    #[error("positive pool is empty: the model classifies no training sample correctly")]
    EmptyPositivePool,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("sample id sets differ: only in before {only_before:?}, only in after {only_after:?}")]
    IdMismatch {
        only_before: Vec<u64>,
        only_after: Vec<u64>,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
