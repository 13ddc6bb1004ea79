use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("malformed episode trace: {0}")]
    MalformedTrace(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint shape error: {0}")]
    Shape(String),

    #[error("scenario `{scenario}` is not available for environment `{env}`")]
    UnknownScenario { scenario: String, env: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
