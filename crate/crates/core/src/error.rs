use std::path::PathBuf;

use thiserror::Error;

use crate::harness::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} at example {index}")]
    NonFinite { index: usize, what: &'static str },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty after preprocessing")]
    EmptyDataset,

    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("split failed: {0}")]
    Split(String),

    #[error("optimizer aborted at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("strategy error: {0}")]
    Strategy(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn strategy(msg: impl Into<String>) -> Self {
        Error::Strategy(msg.into())
    }
}
