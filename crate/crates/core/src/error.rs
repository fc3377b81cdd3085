use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("position ({x:.2}, {y:.2}, {z:.2}) is outside the gain map coverage")]
    OutOfCoverage { x: f64, y: f64, z: f64 },

    #[error("evaluation failed for user {user}: {source}")]
    UserEvaluation {
        user: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("malformed gain map: {0}")]
    GainMapFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
