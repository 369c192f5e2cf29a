use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its type invariant.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// CAR requested when the accidental rate is zero.
    #[error("undefined CAR: accidental rate is zero")]
    UndefinedCar,

    #[error("no interior optimum: noise-free channel makes CAR monotone in mu")]
    NoInteriorOptimum,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes {found:02x?}, expected \"PTAG\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated file at byte offset {offset}: {what}")]
    Truncated { offset: u64, what: &'static str },

    #[error("tags out of order at byte offset {offset}: {time_ps} ps follows {previous_ps} ps")]
    Unsorted {
        offset: u64,
        time_ps: u64,
        previous_ps: u64,
    },

    #[error("unknown channel id {channel} at byte offset {offset}")]
    UnknownChannel { offset: u64, channel: u8 },

    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
