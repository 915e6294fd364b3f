//! Crate-wide error type with a process exit-code mapping.

use thiserror::Error;

/// All failure modes. Exit-code classes: usage/config problems exit 1,
/// data problems exit 2, internal invariant violations exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad command-line usage or an invalid/unknown config value.
    #[error("config: {0}")]
    Config(String),
    /// Command invoked in a way that cannot be executed (missing stage, refusal without --force).
    #[error("usage: {0}")]
    Usage(String),
    /// Input file violates its format contract; message names the offending field.
    #[error("format: {0}")]
    Format(String),
    /// Input file is truncated or structurally unreadable.
    #[error("parse: {0}")]
    Parse(String),
    /// Data fails an operation precondition (empty sequence, missing utterance, degenerate speaker).
    #[error("data: {0}")]
    Data(String),
    /// Internal invariant violated (shape mismatch, non-finite value).
    #[error("internal: {0}")]
    Internal(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 1,
            Error::Format(_) | Error::Parse(_) | Error::Data(_) | Error::Io(_) => 2,
            Error::Internal(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_class() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(Error::Usage("x".into()).exit_code(), 1);
        assert_eq!(Error::Format("sample_rate".into()).exit_code(), 2);
        assert_eq!(Error::Data("missing".into()).exit_code(), 2);
        assert_eq!(Error::Internal("shape".into()).exit_code(), 3);
    }
}
