//! Experiment harness: configuration, sweep orchestration and CSV / plot
//! data emission for the `crop-core` laboratory.
//!
//! Every command is a pure function of the configuration and its seed. Grid
//! cells run on the rayon pool, each with its own derived seed, and their
//! rows are merged in grid order so the worker count never changes output
//! bytes.

pub mod cli;
pub mod commands;
pub mod config;
pub mod schema;

use std::path::PathBuf;

use crop_core::adversary::AdversaryError;
use crop_core::budget::BudgetError;
use crop_core::crop::CropError;
use crop_core::mdp::MdpError;
use crop_core::solver::SolverError;
use crop_core::textfmt::TextError;
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("cannot read config {path}: {source}")]
    ConfigFile { path: PathBuf, source: std::io::Error },
    #[error("missing artifact {0} (run the producing subcommand first)")]
    MissingArtifact(PathBuf),
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Crop(#[from] CropError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error("artifact parse error in {path}: {source}")]
    Text { path: PathBuf, source: TextError },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for missing
    /// artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::ConfigFile { .. } => 2,
            HarnessError::MissingArtifact(_) => 3,
            _ => 1,
        }
    }
}

/// Read and parse a configuration file.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::ConfigFile { path: path.to_path_buf(), source })?;
    Ok(ExperimentConfig::parse(&text)?)
}
