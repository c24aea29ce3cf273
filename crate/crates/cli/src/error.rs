use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] das_core::Error),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },

    #[error("{0}")]
    Usage(String),

    /// An audit or recovery that ran to completion but did not succeed.
    #[error("{0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PROTOCOL: u8 = 3;
pub const EXIT_IO: u8 = 4;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use das_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Protocol(_) => EXIT_PROTOCOL,
            CliError::File { .. } | CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                E::Failure(_) | E::BadTag(_) | E::EmptyTree => EXIT_PROTOCOL,
                E::InvalidParams(_)
                | E::DuplicateKey(_)
                | E::KeyNotFound(_)
                | E::UnknownKey(_)
                | E::SizeMismatch { .. }
                | E::TooManyKeys { .. }
                | E::ZeroTriple => EXIT_USAGE,
                E::WidthMismatch { .. }
                | E::ParamsMismatch
                | E::Malformed(_)
                | E::VersionMismatch { .. }
                | E::Io(_) => EXIT_IO,
            },
        }
    }
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}
