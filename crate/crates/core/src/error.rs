use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {detail}")]
    Schema { line: usize, detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid emission: {0}")]
    InvalidEmission(String),

    #[error("no derivation yields the input")]
    NoParse,

    #[error("derivation count exceeds limit {0}")]
    LimitExceeded(usize),

    #[error("missing prediction for id {0}")]
    MissingPrediction(String),

    #[error("unknown class {0}")]
    UnknownClass(String),

    #[error("classes with no surviving examples: {0:?}")]
    EmptyClasses(Vec<String>),

    #[error("rule not in index: {0}")]
    UnknownRule(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Schema { .. } => "E_SCHEMA",
            Error::Invalid(_) | Error::UnknownClass(_) | Error::EmptyClasses(_) => "E_INPUT",
            Error::Shape { .. } => "E_SHAPE",
            Error::NonFinite(_) => "E_NUMERIC",
            Error::InvalidEmission(_) => "E_EMISSION",
            Error::NoParse => "E_NOPARSE",
            Error::LimitExceeded(_) => "E_LIMIT",
            Error::MissingPrediction(_) => "E_PREDICTION",
            Error::UnknownRule(_) => "E_RULE",
            Error::Empty(_) => "E_EMPTY",
        }
    }
}
