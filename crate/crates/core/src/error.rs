use std::fmt;

/// Errors produced by the inpainting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tunable or named option is out of range or unknown.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller violated an operation's precondition (shapes, ranges, sizes).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Malformed file content. `offset` is the byte position where parsing failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Training(String),
    /// Guided refinement produced non-finite values even after step-size backoff.
    #[error("refinement failed: {0}")]
    Refinement(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl fmt::Display) -> Self {
        Error::Contract(msg.to_string())
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub(crate) fn parse(offset: usize, msg: impl fmt::Display) -> Self {
        Error::Parse {
            offset,
            message: msg.to_string(),
        }
    }

    /// True for failures caused by numerics rather than inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Training(_) | Error::Refinement(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
