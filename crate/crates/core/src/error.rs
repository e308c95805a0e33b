use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline `{name}` is out of scope for this tool: {reason}")]
    OutOfScope { name: String, reason: String },

    #[error("missing artifact {}: run `docket {producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("invalid model file: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data validation,
    /// 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Format(_) | Error::Json(_) => 2,
            Error::Numeric(_) | Error::Dimension(_) => 3,
            Error::Config(_) | Error::OutOfScope { .. } | Error::MissingArtifact { .. } | Error::Io { .. } => 1,
        }
    }
}
