use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("malformed scan {path}: {reason}", path = .path.display())]
    MalformedScan { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: {diagnostics}")]
    TrainingDiverged { epoch: usize, step: usize, diagnostics: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(what: &'static str, reason: impl ToString) -> Self {
        Error::Parse { what, reason: reason.to_string() }
    }
}
