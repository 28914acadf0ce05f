use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A data file or text record that does not follow its declared format.
    #[error("parse error: {0}")]
    Parse(String),

    /// A dataset violating a score-matrix or label invariant.
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class count mismatch: {left} vs {right}")]
    ClassMismatch { left: usize, right: usize },

    /// Calibration needed an order statistic beyond the sample size.
    #[error("threshold saturated: {0}")]
    Saturated(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A modelling precondition (e.g. alpha below the classifier error rate) does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
