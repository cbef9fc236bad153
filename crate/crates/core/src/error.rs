use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the editing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed audio file: {0}")]
    Format(String),

    #[error("unsupported audio encoding: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("training diverged at step {step}: loss {loss}")]
    TrainingDivergence { step: usize, loss: f64 },

    #[error("sampling diverged at t = {t}")]
    SamplingDivergence { t: f64 },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
