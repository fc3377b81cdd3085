use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient source data: need {needed} observations, have {available}")]
    InsufficientSource { needed: usize, available: usize },

    #[error(transparent)]
    Model(#[from] cellshape_core::Error),

    #[error(transparent)]
    Optimizer(#[from] cellshape_turbo::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration problems, 3 for failures
    /// during evaluation or optimization, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use cellshape_core::Error as M;
        match self {
            Error::Config(_) | Error::InsufficientSource { .. } => 2,
            Error::Model(M::InvalidArgument(_) | M::InfeasibleScenario(_) | M::GainMapFormat(_) | M::Json(_) | M::Io(_)) => 2,
            Error::Model(_) | Error::Optimizer(_) => 3,
            Error::Io { .. } | Error::Serialize(_) => 1,
        }
    }
}
