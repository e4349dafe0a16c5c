//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus I/O, model construction and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid conversation {conv_id}: {msg}")]
    InvalidConversation { conv_id: String, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown char_id {0} (not in lexicon)")]
    UnknownChar(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("embedding provider failed at token {index}: {msg}")]
    Provider { index: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// True for errors caused by non-finite or diverging arithmetic,
    /// as opposed to invalid inputs. The CLI maps these to exit code 3.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
