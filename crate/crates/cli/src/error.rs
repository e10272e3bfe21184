use std::fmt;
use std::path::Path;

use tscf_core::Error;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Input,
    Phantom,
    Noise,
    Aif,
    Restore,
    Fit,
    Metrics,
    Output,
    Bench,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Input => "input",
            Stage::Phantom => "phantom",
            Stage::Noise => "noise",
            Stage::Aif => "aif",
            Stage::Restore => "restore",
            Stage::Fit => "fit",
            Stage::Metrics => "metrics",
            Stage::Output => "output",
            Stage::Bench => "bench",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: Stage,
    pub source: Error,
}

pub mod exit {
    pub const ARGUMENT: i32 = 2;
    pub const FORMAT: i32 = 3;
    pub const CONVERGENCE: i32 = 4;
    pub const DATA: i32 = 5;
}

impl CliError {
    pub fn new(stage: Stage, source: Error) -> Self {
        Self { stage, source }
    }

    pub fn io(stage: Stage, path: &Path, source: std::io::Error) -> Self {
        Self::new(stage, Error::Io { path: path.into(), source })
    }

    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Argument(_) | Error::Spec(_) => exit::ARGUMENT,
            Error::Format { .. } | Error::Truncated { .. } | Error::Io { .. } => exit::FORMAT,
            Error::Convergence { .. } | Error::BelowThreshold { .. } | Error::NoSignal => exit::CONVERGENCE,
            Error::Data(_) | Error::InsufficientData(_) => exit::DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage.as_str(), self.source)
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Tags core errors with the stage they surfaced in.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, CliError>;
}

impl<T> StageExt<T> for tscf_core::Result<T> {
    fn stage(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(stage, e))
    }
}
