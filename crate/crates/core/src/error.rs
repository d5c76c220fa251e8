use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no consensus: best model has {inliers} inliers (need 4)")]
    NoConsensus { inliers: usize },
    #[error("point maps to infinity (projective depth {depth:e})")]
    AtInfinity { depth: f64 },

    #[error("frame has no texture (constant intensity)")]
    EmptyFrame,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("too few pairs: {got} (need at least 4)")]
    TooFewPairs { got: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("frame mismatch: {a} vs {b}")]
    FrameMismatch { a: usize, b: usize },
    #[error("frame indices are not contiguous at position {position}")]
    NonContiguousFrames { position: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("energy evaluation is not finite at outer iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },

    #[error("warped cell ({row}, {col}) folds over")]
    DegenerateQuad { row: usize, col: usize },
    #[error("empty input")]
    EmptyInput,

    #[error("sequence too short: {got} frames (need {need})")]
    TooShort { got: usize, need: usize },
    #[error("no matches for frame {frame}")]
    NoMatches { frame: usize },

    #[error("scene too small: {width}x{height} (need at least 256x256)")]
    TooSmall { width: u32, height: u32 },
    #[error("camera {camera} window leaves the scene at frame {frame}")]
    WindowOutOfScene { camera: usize, frame: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

/// Coarse classification used by the command-line driver for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::NoConsensus { .. }
            | Error::NonFiniteEnergy { .. }
            | Error::DegenerateQuad { .. }
            | Error::AtInfinity { .. }
            | Error::DegenerateInput(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
