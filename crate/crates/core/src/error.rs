use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension disagreement between operands; the message names both shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input outside the operation's domain (e.g. a probability outside [0,1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric routine failed to produce a usable result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed binary data; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// Checkpoint written by an incompatible format version.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    /// Stored config digest does not match the stored config.
    #[error("checkpoint config digest mismatch")]
    DigestMismatch,

    /// Payload ended before the declared length.
    #[error("truncated data at byte {0}")]
    Truncated(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
