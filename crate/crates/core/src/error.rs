use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed weight or quantized-weight file. `tensor` names the
    /// offending entry when the failure is attributable to one.
    #[error("weight format error{}: {msg}", tensor.as_ref().map(|t| format!(" in tensor '{t}'")).unwrap_or_default())]
    Format { tensor: Option<String>, msg: String },

    /// Input that parses but violates a record schema.
    #[error("{file}:{line}: {msg}")]
    Schema { file: String, line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("missing parameter '{0}'")]
    MissingParameter(String),

    #[error("parameter '{0}' has no group assignment")]
    MissingGroup(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// A statistic whose denominator vanishes on the given subset.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown language '{0}'")]
    UnknownLanguage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(tensor: Option<&str>, msg: impl Into<String>) -> Self {
        Error::Format { tensor: tensor.map(str::to_owned), msg: msg.into() }
    }

    pub fn schema(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Schema { file: file.into(), line, msg: msg.into() }
    }

    /// True for errors caused by malformed inputs rather than I/O or numerics.
    pub fn is_schema(&self) -> bool {
        matches!(self, Error::Schema { .. } | Error::Format { .. })
    }
}
