use std::path::{Path, PathBuf};

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Core(gpmpcc_core::Error),
    #[error("{0}")]
    Other(String),
}

impl From<gpmpcc_core::Error> for SimError {
    fn from(e: gpmpcc_core::Error) -> Self {
        SimError::Core(e)
    }
}

impl SimError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        SimError::Io { path: path.into(), message: e.to_string() }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            _ => 1,
        }
    }
}
