//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside its mathematical domain (probabilities, correlations, bounds).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structural problem in user-supplied data (bad CSV, duplicate rows, bad labels).
    #[error("input error: {0}")]
    Input(String),

    /// Numerical routine failed to reach its target (non-convergence, singular system).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Unknown name passed to a registry lookup.
    #[error("unknown {kind} '{name}', available: {available}")]
    UnknownName {
        kind: &'static str,
        name: String,
        available: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code the CLI should report for this error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Domain(_) | Error::Input(_) | Error::UnknownName { .. } => 1,
            Error::Numerical(_) => 2,
        }
    }
}
