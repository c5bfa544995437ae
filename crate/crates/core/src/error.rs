use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("label out of range: {label} (vocabulary size {vocab_size})")]
    LabelOutOfRange { label: usize, vocab_size: usize },

    #[error("inconsistent feature dimension: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty label set in training data (sample {index})")]
    EmptyLabels { index: usize },

    #[error("no negative labels: label set covers the whole vocabulary")]
    NoNegatives,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("joint distribution over {vocab_size} labels exceeds the enumeration cap of {cap}")]
    EnumerationCap { vocab_size: usize, cap: usize },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
