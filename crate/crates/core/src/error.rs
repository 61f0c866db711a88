use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("{path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        /// `line N` for text formats, `offset N` for binary ones.
        location: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse_line(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            location: format!("line {line}"),
            message: msg.into(),
        }
    }

    pub(crate) fn parse_offset(path: impl Into<PathBuf>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            location: format!("offset {offset}"),
            message: msg.into(),
        }
    }
}
