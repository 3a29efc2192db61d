use std::fmt;
use std::path::Path;

use distill_core::bridge::BridgeError;
use distill_core::critic::CriticError;
use distill_core::decoder::DecodeError;
use distill_core::evalkit::EvalError;
use distill_core::lm::LmError;
use distill_core::prompts::PromptError;
use distill_core::selfimit::LoopError;

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Input,
    Config,
    Pipeline,
    Bridge,
}

impl ErrorKind {
    pub fn code(self) -> u8 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Input => 4,
            ErrorKind::Config => 5,
            ErrorKind::Pipeline => 6,
            ErrorKind::Bridge => 7,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Io => "io",
            ErrorKind::Input => "input",
            ErrorKind::Config => "config",
            ErrorKind::Pipeline => "pipeline",
            ErrorKind::Bridge => "bridge",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Input, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }

    /// Prefixes the message with the file it concerns.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    /// The single-line JSON written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind.name(), "code": self.kind.code(), "message": self.message }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind.name(), self.message)
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        let kind = match e {
            LmError::Config(_) => ErrorKind::Config,
            LmError::Format { .. } | LmError::EmptyCorpus | LmError::Vocab(_) => ErrorKind::Input,
            _ => ErrorKind::Pipeline,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Config(m) => Self::config(m),
            DecodeError::Lm(e) => e.into(),
            other => Self::new(ErrorKind::Pipeline, other.to_string()),
        }
    }
}

impl From<CriticError> for CliError {
    fn from(e: CriticError) -> Self {
        let kind = match e {
            CriticError::Config(_) => ErrorKind::Config,
            CriticError::Io(_) => ErrorKind::Io,
            CriticError::Format { .. } | CriticError::SingleClass => ErrorKind::Input,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<LoopError> for CliError {
    fn from(e: LoopError) -> Self {
        match e {
            LoopError::Config(m) => Self::config(m),
            LoopError::Io { path, source } => Self::io(&path, source),
            LoopError::Decode(e) => e.into(),
            LoopError::Lm(e) => e.into(),
            other => Self::new(ErrorKind::Pipeline, other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => Self::config(m),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Lm(e) => e.into(),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        Self::new(ErrorKind::Bridge, e.to_string())
    }
}
