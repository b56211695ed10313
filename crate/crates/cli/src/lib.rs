//! Experiment runner: generate, split, train, eval, theory and report
//! stages over a JSON experiment config.
//!
//! Every artifact lands in `<out>/<config-hash>/<seed>/<stage>.json` and
//! carries the config hash and seed. Stages read only their declared inputs,
//! so reruns with the same config and seeds reproduce identical bytes.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{Options, RunContext};
pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Run(_) => 1,
        }
    }
}

pub(crate) fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}
