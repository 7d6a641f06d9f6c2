use thiserror::Error;

/// Errors produced anywhere in the simulation chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample {index} = {value} outside [-1, 1]")]
    Range { index: usize, value: f64 },

    #[error("BRAM capacity exceeded on channel {channel}: {requested} samples requested, limit is {capacity}")]
    CapacityExceeded {
        channel: usize,
        requested: usize,
        capacity: usize,
    },

    #[error("overlapping capture windows for triggers {first} and {second}")]
    Framing { first: usize, second: usize },

    #[error("capture record {record} extends past the end of the stream")]
    Truncated { record: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("at sweep point {point}: {source}")]
    AtPoint {
        point: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// True for failures that come from numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) => true,
            Error::AtPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
