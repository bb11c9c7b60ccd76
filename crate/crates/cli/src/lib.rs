//! Command-line pipeline around the `azmi-scvae` library: simulate,
//! preprocess, train, evaluate, reconstruct and classify.

pub mod config;
pub mod output;
pub mod stages;

use std::path::{Path, PathBuf};

pub use config::RunConfig;

/// Environment variable that relocates relative output paths.
pub const ARTIFACT_ROOT_ENV: &str = "SCVAE_ARTIFACT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<azmi_scvae::pipeline::PipelineError> for CliError {
    fn from(e: azmi_scvae::pipeline::PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<azmi_scvae::leaksim::SimError> for CliError {
    fn from(e: azmi_scvae::leaksim::SimError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<azmi_scvae::nn::NnError> for CliError {
    fn from(e: azmi_scvae::nn::NnError) -> Self {
        match e {
            azmi_scvae::nn::NnError::NonFiniteGradient(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<azmi_scvae::posterior::PosteriorError> for CliError {
    fn from(e: azmi_scvae::posterior::PosteriorError) -> Self {
        match e {
            azmi_scvae::posterior::PosteriorError::NonFiniteParams => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<azmi_scvae::metrics::MetricsError> for CliError {
    fn from(e: azmi_scvae::metrics::MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Relative paths are placed under `$SCVAE_ARTIFACT_ROOT` when it is set.
pub fn artifact_path(p: &Path) -> PathBuf {
    match std::env::var_os(ARTIFACT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}
