//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by mesh geometry, warping, optimization and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) outside mesh rectangle {width}x{height}")]
    OutOfBounds { x: f64, y: f64, width: f64, height: f64 },

    #[error("point ({x}, {y}) not covered by any mesh cell")]
    OutsideMesh { x: f64, y: f64 },

    #[error("inverse bilinear solve failed to converge at ({x}, {y})")]
    NonConvergence { x: f64, y: f64 },

    #[error("mesh has folded cells: {0:?}")]
    FoldOver(Vec<(usize, usize)>),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("optimizer diverged at iteration {iter}: loss {loss}")]
    OptimizerDiverged { iter: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
