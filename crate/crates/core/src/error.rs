use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {context} (jitter reached {jitter:e})")]
    NumericalFailure { context: String, jitter: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("site {site} has only {converged} converged runs (need at least 2)")]
    SiteStarvation { site: usize, converged: usize },

    #[error("simulator protocol error: {0}")]
    Protocol(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("simulator failure: {0}")]
    SimulatorFailure(String),

    #[error("missing fraction {fraction:.3} exceeds threshold {threshold:.3}")]
    Missingness { fraction: f64, threshold: f64 },

    #[error("upstream artifact missing: {}", .0.display())]
    UpstreamMissing(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, jitter: f64) -> Self {
        Error::NumericalFailure {
            context: context.into(),
            jitter,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
