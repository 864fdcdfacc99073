//! Experiment orchestration: configuration, run manifests and the stage
//! functions behind each CLI command.

pub mod config;
pub mod experiment;
pub mod manifest;
mod stages;

pub use config::ExperimentConfig;
pub use manifest::{RunManifest, StageRecord};
pub use stages::*;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::eval::EvalError;
use crate::ground::GroundError;
use crate::kg::KgError;
use crate::kge::KgeError;
use crate::r2n::R2nError;
use crate::rules::RuleError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing {what} at {path}; run `r2n {producer}` first")]
    MissingArtifact { what: &'static str, path: PathBuf, producer: &'static str },
    #[error("{path} changed since it was recorded (expected digest {expected}, found {found}); rerun `r2n {producer}` or pass --force")]
    StaleArtifact { path: PathBuf, expected: String, found: String, producer: &'static str },
    #[error("experiment directory is locked by {0}; another command is running or a stale lock must be removed")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] KgError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    R2n(#[from] R2nError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::StaleArtifact { .. } => 4,
            PipelineError::Locked(_) => 5,
            PipelineError::Io { .. } => 6,
            PipelineError::Data(_) | PipelineError::Rule(_) | PipelineError::Ground(_) => 7,
            PipelineError::Kge(_) | PipelineError::R2n(_) | PipelineError::Autodiff(_) => 8,
            PipelineError::Eval(_) => 9,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), source }
    }
}
