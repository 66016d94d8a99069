use std::io;
use std::path::Path;

use thiserror::Error;

use crate::latent::Shape;

pub type Result<T, E = LfaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LfaError {
    #[error("malformed latent file: {0}")]
    Format(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// log-sigma is undefined for these channels.
    #[error("zero standard deviation in channel(s) {channels:?}")]
    ZeroSigma { channels: Vec<usize> },

    #[error("malformed anchor record: {0}")]
    AnchorRecord(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("session integrity check failed: {0}")]
    Integrity(String),

    #[error("session is locked by another process: {0}")]
    Locked(String),

    #[error("adapter failed: {message}{}", stderr_suffix(.stderr))]
    Adapter { message: String, stderr: String },
}

fn stderr_suffix(stderr: &str) -> String {
    if stderr.is_empty() {
        String::new()
    } else {
        format!(" [stderr: {stderr}]")
    }
}

impl LfaError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        LfaError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn io_at(path: &Path, source: io::Error) -> Self {
        LfaError::io(path.display().to_string(), source)
    }

    /// Process exit code used by the CLI for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            LfaError::Format(_)
            | LfaError::ShapeMismatch { .. }
            | LfaError::InvalidArgument(_)
            | LfaError::AnchorRecord(_)
            | LfaError::Config(_) => 2,
            LfaError::NonFinite(_) | LfaError::ZeroSigma { .. } => 3,
            LfaError::Io { .. } => 4,
            LfaError::Integrity(_) | LfaError::Locked(_) => 5,
            LfaError::Adapter { .. } => 6,
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "format",
            3 => "numeric",
            4 => "io",
            5 => "session",
            6 => "adapter",
            _ => "other",
        }
    }
}
