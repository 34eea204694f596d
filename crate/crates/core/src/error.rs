//! Error type shared across the pipeline.

use std::fmt;
use std::path::PathBuf;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Config,
    /// Unreadable, malformed or invariant-violating data.
    Data,
    /// A numerical procedure failed (degenerate geometry, non-convergence).
    Numerical,
}

#[derive(Debug)]
pub enum Error {
    /// I/O failure on a named file.
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed file content; `line` is 1-based where applicable.
    Parse { path: PathBuf, line: usize, message: String },
    /// A constructed value would violate a type invariant.
    Validation(String),
    /// Dimension or grid mismatch between operands.
    Shape(String),
    /// Invalid configuration value or combination.
    Config(String),
    /// Not enough data to run an estimator.
    InsufficientData(String),
    /// Input geometry does not constrain the solution (rank deficiency).
    DegenerateGeometry(String),
    /// Calibration frame pair with no overlapping valid pixels.
    EmptyOverlap { frame: usize },
    /// RCS calibration did not converge; carries the last iterate.
    CalibrationDiverged { iterations: usize, last_k: Vec<f64> },
    /// Sinkhorn scaling did not reach the marginal tolerance.
    SinkhornDiverged { iterations: usize, marginal_error: f64 },
    /// Similarity of an image with no nonzero pixel is undefined.
    ZeroEnergy,
    /// A metric whose denominator is empty (e.g. no ground-truth queries).
    UndefinedMetric(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Shape(_)
            | Error::InsufficientData(_)
            | Error::EmptyOverlap { .. }
            | Error::ZeroEnergy
            | Error::UndefinedMetric(_) => ErrorKind::Data,
            Error::DegenerateGeometry(_)
            | Error::CalibrationDiverged { .. }
            | Error::SinkhornDiverged { .. } => ErrorKind::Numerical,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::Parse { path, line, message } => {
                write!(f, "parse error in {} at line {line}: {message}", path.display())
            }
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::DegenerateGeometry(msg) => write!(f, "degenerate geometry: {msg}"),
            Error::EmptyOverlap { frame } => {
                write!(f, "calibration frame {frame} has no overlapping valid pixels")
            }
            Error::CalibrationDiverged { iterations, .. } => {
                write!(f, "rcs calibration did not converge within {iterations} iterations")
            }
            Error::SinkhornDiverged { iterations, marginal_error } => write!(
                f,
                "sinkhorn did not converge within {iterations} iterations (marginal error {marginal_error:.3e})"
            ),
            Error::ZeroEnergy => write!(f, "similarity undefined for all-zero image"),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
