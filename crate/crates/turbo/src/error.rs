use thiserror::Error;

use crate::optimizer::PartialRun;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error type returned by objective callbacks.
pub type ObjectiveError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance matrix is not positive definite even with jitter {jitter:e}")]
    SingularModel { jitter: f64 },

    #[error("trust region {0} has no fitted model")]
    NotReady(usize),

    #[error("objective evaluation failed after {} evaluations: {source}", partial.history.len())]
    Objective {
        #[source]
        source: ObjectiveError,
        partial: Box<PartialRun>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
