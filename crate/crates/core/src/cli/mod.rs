//! Command-line front end: JSON configs in, CSV and JSON artifacts out.

mod commands;
mod config;

pub use commands::{
    run_command, run_compare_losses, run_experiment, run_probe, run_spectrum, run_train, Command,
    CompareRow, Prepared, ProbeRow,
};
pub use config::{
    CompareSpec, EmbeddingMethod, EmbeddingSpec, EnvironmentSpec, ExperimentConfig,
    ObservationSpec, ProbeMethod, ProbeSpec, SamplingSpec, TaskName, TrainingSpec,
};

use crate::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status: 2 for configuration, 3 for numerical and 4 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Attaches the config path (or pipeline stage) that produced `err`.
    pub fn from_module(context: &str, err: Error) -> Self {
        let msg = format!("{context}: {err}");
        match err {
            Error::Io(_) => CliError::Io(msg),
            Error::Json(_) => CliError::Config(msg),
            Error::Diverged { .. }
            | Error::NotConverged { .. }
            | Error::RankDeficient { .. }
            | Error::ZeroVariance { .. } => CliError::Numerical(msg),
            _ => CliError::Config(msg),
        }
    }
}

pub(crate) trait Context<T> {
    fn ctx(self, context: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for crate::Result<T> {
    fn ctx(self, context: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_module(context, e))
    }
}
