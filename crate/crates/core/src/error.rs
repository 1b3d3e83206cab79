use thiserror::Error;

/// Errors produced by the simulator, learners and oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// A physical invariant of the microsimulation was violated. Always a bug.
    #[error("simulation fault: {0}")]
    SimulationFault(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
