use std::path::PathBuf;

/// Errors produced by the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("raster truncated: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid phantom spec: {0}")]
    Spec(String),

    #[error("magnitude SNR {ratio:.4} is below the fixed-point threshold {threshold:.4}")]
    BelowThreshold { ratio: f64, threshold: f64 },

    #[error("{what} did not converge: {reason}")]
    Convergence { what: &'static str, reason: String },

    #[error("no voxel in the ROI shows a detectable bolus arrival")]
    NoSignal,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}
