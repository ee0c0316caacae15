use thiserror::Error;

/// Errors raised by the numerical core and the closed-loop runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerically degenerate: {0}")]
    Degenerate(String),

    #[error("plant specification fault: {0}")]
    Plant(String),

    #[error("simulation diverged at t = {time}: {detail}")]
    Divergence { time: f64, detail: String },

    #[error("controller fault: {0}")]
    Controller(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
