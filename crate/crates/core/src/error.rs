use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dual nesting depth {depth} exceeds the supported maximum of 2")]
    NestingTooDeep { depth: usize },

    #[error("singular matrix: zero pivot in column {column}")]
    Singular { column: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("gradient tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("empty pool: {0}")]
    EmptyPool(&'static str),

    #[error("numeric abort: {0}")]
    NumericAbort(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter(_) | Error::EmptyPool(_) => 1,
            Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => 3,
            _ => 2,
        }
    }
}
