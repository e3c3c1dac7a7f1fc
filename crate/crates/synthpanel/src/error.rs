use std::fmt;
use std::path::Path;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Transform,
    Diagnose,
    Estimate,
    Inference,
    Simulate,
    Report,
    Plot,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Transform => "transform",
            Stage::Diagnose => "diagnose",
            Stage::Estimate => "estimate",
            Stage::Inference => "inference",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
            Stage::Plot => "plot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Estimation,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 1,
            ErrorKind::Estimation => 2,
            ErrorKind::Io => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct StudyError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

pub type Result<T, E = StudyError> = std::result::Result<T, E>;

impl StudyError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { stage, kind, message: message.into() }
    }

    pub fn validation(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorKind::Validation, message)
    }

    pub fn estimation(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorKind::Estimation, message)
    }

    pub fn io(stage: Stage, path: &Path, err: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Io, format!("{}: {err}", path.display()))
    }

    /// Core errors raised while building or reshaping data are validation
    /// failures; anything raised later is an estimation failure.
    pub fn from_core(stage: Stage, err: synthpanel_core::Error) -> Self {
        let kind = match stage {
            Stage::Config | Stage::Ingest | Stage::Transform | Stage::Diagnose => ErrorKind::Validation,
            _ => ErrorKind::Estimation,
        };
        Self::new(stage, kind, err.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

pub(crate) trait CoreResultExt<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> CoreResultExt<T> for synthpanel_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| StudyError::from_core(stage, e))
    }
}

pub fn read_file(stage: Stage, path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| StudyError::io(stage, path, e))
}
