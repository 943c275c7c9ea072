use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or inconsistent input (instances, configs, arguments).
    #[error("validation error: {0}")]
    Validation(String),

    /// A reachable-set computation outgrew its configured state budget.
    #[error("resource budget exceeded: {reached} augmented states reached (budget {budget})")]
    Budget { reached: usize, budget: usize },

    #[error("episode finished: cannot step past h = {horizon}")]
    EpisodeFinished { horizon: usize },

    #[error("episode still running at step {step} of {horizon}")]
    EpisodeRunning { step: usize, horizon: usize },

    /// The reveal probability was requested for an inter-arrival value that
    /// has no mass at or above it.
    #[error("unreachable reveal state: no inter-arrival mass at or above {delta_tilde} for (s={state}, a={action})")]
    UnreachableReveal { state: usize, action: usize, delta_tilde: i32 },

    #[error("policy undefined at {0}")]
    PolicyUndefined(String),

    #[error("adapter inconsistent with spec: {0}")]
    Inconsistent(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error in {file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Validation(format!("json: {e}"))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
