use std::fmt;

use hazmargin_core::ingest::IngestError;
use hazmargin_core::{CalibrationError, FusionError, MetricsError};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 2,
    InsufficientCorpus = 3,
    Io = 4,
}

impl ExitKind {
    fn label(self) -> &'static str {
        match self {
            ExitKind::Validation => "validation",
            ExitKind::InsufficientCorpus => "insufficient_corpus",
            ExitKind::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Validation, message: message.into() }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        serde_json::json!({
            "level": "error",
            "kind": self.kind.label(),
            "exit_code": self.code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn warn(message: impl AsRef<str>) {
    eprintln!(
        "{}",
        serde_json::json!({"level": "warning", "message": message.as_ref()})
    );
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let kind = if e.is_io() { ExitKind::Io } else { ExitKind::Validation };
        Self { kind, message: e.to_string() }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        let kind = if e.is_insufficient_corpus() {
            ExitKind::InsufficientCorpus
        } else {
            ExitKind::Validation
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let kind = match e {
            MetricsError::NoHazardVideos
            | MetricsError::NoNonHazardVideos
            | MetricsError::EmptyCorpus => ExitKind::InsufficientCorpus,
            _ => ExitKind::Validation,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        Self::validation(e.to_string())
    }
}
