use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad image file: {0}")]
    ImageFormat(String),
    #[error("image payload too short: expected {expected} bytes, found {found}")]
    ImageLength { expected: usize, found: usize },
    #[error("bad checkpoint at byte {offset}: {reason}")]
    CheckpointFormat { offset: usize, reason: String },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u8),
    #[error("checkpoint does not match the configuration: {0}")]
    CheckpointMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] irflow_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        use irflow_core::Error as C;
        match self {
            Error::MissingInput(_) => 2,
            Error::Core(C::Diverged { .. } | C::Numerical { .. } | C::NonFinite { .. }) => 3,
            Error::CheckpointFormat { .. } | Error::CheckpointVersion(_) | Error::CheckpointMismatch(_) => 4,
            _ => 1,
        }
    }
}
