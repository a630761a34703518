//! Experiment harness for MatrixConv unmixing: synthetic data, guidance,
//! NBA/NBARED training, reference solvers, evaluation and sweeps.

pub mod commands;
pub mod config;

use thiserror::Error;

/// Exit code for a failed run.
pub const EXIT_RUN: u8 = 1;
/// Exit code for an invalid configuration.
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] mcu_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(mcu_core::Error::Config(_)) => EXIT_CONFIG,
            _ => EXIT_RUN,
        }
    }
}
