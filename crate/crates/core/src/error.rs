use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts or lengths that do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// Invalid user-supplied parameters.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset or model file.
    #[error("parse error in {field}: {message}")]
    Parse { field: String, message: String },

    /// A closed-form quantity is undefined for the supplied arguments.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("classifier error: {0}")]
    Classifier(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
