use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Layer shapes or model configuration do not fit together.
    #[error("configuration error at layer {layer}: {message}")]
    Config { layer: usize, message: String },

    /// Bad arguments or data supplied by the caller.
    #[error("input error: {0}")]
    Input(String),

    /// An operation was called in the wrong state (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    /// NaN/Inf encountered.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Manifest schema violation; `field` is a dotted path such as `train.learning_rate`.
    #[error("validation error at `{field}`: {message}")]
    Validation { field: String, message: String },

    /// An upstream artifact is missing; `command` names the CLI verb that produces it.
    #[error("missing artifact {}; run `{command}` first", path.display())]
    Dependency { path: PathBuf, command: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: msg.into(),
        }
    }
}
