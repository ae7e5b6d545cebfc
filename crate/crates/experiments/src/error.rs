use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] qg2_core::Error),

    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),

    #[error("invalid study input: {0}")]
    Invalid(String),

    #[error("target not reached: {0}")]
    Infeasible(String),

    #[error("output directory {0} is not empty (pass --overwrite to replace it)")]
    OutputExists(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl Error {
    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Core(qg2_core::Error::NonFinite { .. }) | Error::Infeasible(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
