use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the loss, metric, synthesis and I/O routines.
#[derive(Debug, Error)]
pub enum CapeError {
    #[error("empty foreground")]
    EmptyForeground,

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("unsupported dimensionality: {0} (expected 2 or 3)")]
    UnsupportedDimensionality(usize),

    #[error("point {index} at {coords:?} lies outside grid {shape:?}")]
    PointOutOfBounds {
        index: usize,
        coords: Vec<f64>,
        shape: Vec<usize>,
    },

    #[error("nodes {from} and {to} are unreachable from each other")]
    Unreachable { from: usize, to: usize },

    #[error("mask disconnection: {end:?} not reachable from {start:?} inside the corridor mask")]
    MaskDisconnection { start: Vec<usize>, end: Vec<usize> },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("gap length {gap_len} exceeds longest chain ({longest} cells)")]
    GapTooLong { gap_len: usize, longest: usize },

    #[error("optimization diverged at step {step}: loss {loss} exceeds 10x initial {initial}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CapeError> = std::result::Result<T, E>;

impl CapeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CapeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        CapeError::Format {
            path: path.to_string(),
            message: message.into(),
        }
    }
}
