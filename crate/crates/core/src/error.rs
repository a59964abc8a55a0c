use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient variation: {0}")]
    InsufficientVariation(String),

    #[error("referential integrity violated; unknown references: {}", .offenders.join(", "))]
    ReferentialIntegrity { offenders: Vec<String> },

    #[error("model not fitted: {0}")]
    ModelNotFitted(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("registry mismatch: {0}")]
    RegistryMismatch(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("{path}:{line}: {message}")]
    Input {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn input(path: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}
