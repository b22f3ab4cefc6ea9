use std::io;
use std::path::{Path, PathBuf};

/// Errors of the IO and command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] soupsr_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// 1 for usage and range problems, 2 for bad or missing data, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        use soupsr_core::Error as C;
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Format(_) | Error::Unsupported(_) => 2,
            Error::Core(e) => match e {
                C::Range(_) | C::Config(_) => 1,
                C::Numerical(_) => 3,
                C::Dimension(_) | C::Shape(_) | C::Data(_) | C::Corruption(_) | C::InsufficientData(_) => 2,
            },
        }
    }
}

pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
    Error::Core(soupsr_core::Error::Corruption(msg.into()))
}
