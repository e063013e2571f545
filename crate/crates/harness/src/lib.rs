//! Experiment harness: configuration, the train/remove/attack pipeline, the
//! removal-fraction sweep, and combined reporting. The `unlearn` binary is a
//! thin CLI over this library.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentOutput, MetricsRow, PipelineScope};
pub use report::report;
pub use sweep::{sweep_removal_fraction, SweepOutput, SweepRow};

use std::path::PathBuf;
use thiserror::Error;
use unlearn_core::attacks::AttackError;
use unlearn_core::data::DataError;
use unlearn_core::journal::JournalError;
use unlearn_core::nn::NnError;
use unlearn_core::removal::RemovalError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Removal(#[from] RemovalError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("output directory {0} exists and is not empty")]
    OutDirNotEmpty(PathBuf),
    #[error("missing metrics files: {}", format_paths(.0))]
    MissingFiles(Vec<PathBuf>),
    #[error("sweep needs deltas for {needed} batches but the journal covers {available}")]
    SweepCoverage { needed: usize, available: usize },
    #[error("{0}")]
    Invalid(String),
}

fn format_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl HarnessError {
    /// Process exit code category. 0 is success; each failure class gets its
    /// own code so scripts can react without parsing stderr.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Nn(_) => 4,
            HarnessError::Journal(_) => 5,
            HarnessError::Removal(_) => 6,
            HarnessError::Attack(_) => 7,
            HarnessError::Io { .. } | HarnessError::OutDirNotEmpty(_) => 8,
            HarnessError::MissingFiles(_) => 9,
            HarnessError::SweepCoverage { .. } | HarnessError::Invalid(_) => 10,
        }
    }
}
