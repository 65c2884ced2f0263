use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the audit toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The backend could not be reached after the retry budget was spent.
    #[error("query {key} failed after {attempts} attempt(s): {message}")]
    Transport {
        key: String,
        attempts: u32,
        message: String,
    },

    /// The backend answered but declined to produce content.
    #[error("query {key} refused by backend: {message}")]
    Refusal { key: String, message: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

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

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the oracle transport or backend content.
    pub fn is_oracle_failure(&self) -> bool {
        matches!(self, Error::Transport { .. } | Error::Refusal { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
