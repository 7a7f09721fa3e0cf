//! Crate-wide error type.

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up. The message carries a
    /// dimension report.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a precondition (nonpositive extent, class out
    /// of range, bad threshold, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A config file, manifest, or serialized payload failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Training loss went non-finite or exploded; a diagnostic dump has
    /// been written if a dump path was available.
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    /// A checkpoint does not match the model built from the config.
    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
