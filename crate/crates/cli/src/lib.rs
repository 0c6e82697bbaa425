//! Experiment runner behind the `mtnp` binary: configuration, training,
//! evaluation, paired variant comparison, data generation and the
//! invariant suite.

pub mod config;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("run failed: {0}")]
    Failed(String),
}

impl RunError {
    /// Process exit status: 1 verification or run failure, 2 configuration,
    /// 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Verify(_) | RunError::Failed(_) => 1,
            RunError::Config(_) => 2,
            RunError::Io(_) => 3,
        }
    }
}

impl From<mtnp_core::Error> for RunError {
    fn from(e: mtnp_core::Error) -> Self {
        match e {
            mtnp_core::Error::Config(m) => RunError::Config(m),
            mtnp_core::Error::Io(e) => RunError::Io(e.to_string()),
            e @ mtnp_core::Error::Parse { .. } => RunError::Io(e.to_string()),
            other => RunError::Failed(other.to_string()),
        }
    }
}

impl From<mtnp_core::TensorError> for RunError {
    fn from(e: mtnp_core::TensorError) -> Self {
        RunError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}
