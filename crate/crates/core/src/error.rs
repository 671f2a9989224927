use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or corrupt image {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("transform failed: {0}")]
    Transform(String),

    /// ROC-family metrics need both classes.
    #[error("metric domain error: {0}")]
    MetricDomain(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("stats error: {0}")]
    Stats(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failing stage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Contract(_) | Error::Parse { .. } | Error::Integrity(_) | Error::Format { .. }
        )
    }
}
