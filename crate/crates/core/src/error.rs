use std::io;

use thiserror::Error;

use crate::attack::RunTrace;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum BadgeError {
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Training { epoch: usize, loss: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// The run stopped; `trace` holds every completed update.
    #[error("non-finite loss at update {update}")]
    NonFinite { update: usize, trace: Box<RunTrace> },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BadgeError>;
