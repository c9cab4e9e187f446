use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Caller-supplied data violates the input schema.
    #[error("input error: {0}")]
    Input(String),

    /// A documented precondition on argument values was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The metric is not defined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0} not found: {1}")]
    NotFound(&'static str, PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numeric failure stopped training; `checkpoint` holds the last
    /// completed epoch.
    #[error("training aborted in epoch {epoch}: {source}")]
    TrainingAborted {
        epoch: usize,
        source: Box<Error>,
        checkpoint: Box<crate::train::Checkpoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
