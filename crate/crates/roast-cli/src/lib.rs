//! Experiment harness around the core library: synthetic dataset
//! generation, the benchmark runner, verification suites, reports and
//! file formats.

pub mod attack;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod experiment;
pub mod report;
pub mod verify;

use thiserror::Error;

/// Harness-level errors; each variant maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input data (exit 1).
    #[error("{0}")]
    Validation(String),
    /// Training loss became non-finite (exit 2).
    #[error("{0}")]
    Divergence(String),
    /// Filesystem trouble (exit 3).
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<roast_core::CoreError> for CliError {
    fn from(e: roast_core::CoreError) -> Self {
        match e {
            roast_core::CoreError::Diverged { iteration } => {
                CliError::Divergence(format!("training diverged at iteration {iteration}"))
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}
