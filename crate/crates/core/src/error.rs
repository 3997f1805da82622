use std::path::PathBuf;

/// Errors produced by the keynmf library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("invalid document `{id}`: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error("document `{0}` is timestamped before the slice origin")]
    BeforeOrigin(String),

    #[error("dictionary segmenter requires a non-empty lexicon")]
    EmptyLexicon,

    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("embedding transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-norm vector has no defined cosine similarity")]
    ZeroNorm,

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("{what} is undefined at t = {t} for window {window}")]
    UndefinedPoint {
        what: &'static str,
        t: usize,
        window: usize,
    },

    #[error("series too short: need at least {required} points, got {got}")]
    TooShort { required: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
