use std::io;

/// Errors surfaced by the library and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value outside the mathematical domain of an operation, e.g. a
    /// diffusion time where the noise level vanishes.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {term}: {detail}")]
    NonFinite { term: String, detail: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("checkpoint format version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },

    #[error("config hash mismatch: checkpoint has {stored}, current config is {current}")]
    ConfigMismatch { stored: String, current: String },

    #[error("config error: {0}")]
    Config(String),

    /// An evaluation harness precondition failed (for example a probe
    /// classifier that cannot reach its accuracy floor).
    #[error("harness error: {0}")]
    Harness(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
