use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{field} width mismatch: expected {expected} bytes, got {actual}")]
    WidthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("IBLT parameters do not match")]
    ParamsMismatch,

    #[error("all-zero triple cannot be represented")]
    ZeroTriple,

    #[error("malformed bytes: {0}")]
    Malformed(String),

    #[error("unsupported format version {found}")]
    VersionMismatch { found: u16 },

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("key not found: {0}")]
    KeyNotFound(String),

    #[error("unknown key {0}")]
    UnknownKey(String),

    #[error("tag does not verify for key {0}")]
    BadTag(String),

    #[error("tree is empty")]
    EmptyTree,

    #[error("{keys} keys but {blocks} blocks")]
    SizeMismatch { keys: usize, blocks: usize },

    #[error("audit of {requested} keys exceeds delta = {delta}")]
    TooManyKeys { requested: usize, delta: usize },

    #[error("block for key {0} could not be recovered")]
    Failure(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }
}
