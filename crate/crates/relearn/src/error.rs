use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors surfaced by parsing, data validation, training, and model I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed line in a text input. Carries the source path (or a
    /// pseudo-path such as `<memory>` when parsing from a reader), the
    /// 1-based line number, and a description of the problem.
    #[error("{path}:{line}: {msg}", path = .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Inputs parsed cleanly but violate a cross-cutting contract:
    /// mismatched dimensions, unknown video ids, empty splits, numerical
    /// breakdown during training, and the like.
    #[error("{0}")]
    Data(String),

    /// An OS-level file operation failed. The offending path is always
    /// part of the message.
    #[error("{path}: {source}", path = .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn file(path: &Path, source: io::Error) -> Self {
        Error::File {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
