use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments; nothing was computed.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    /// Input values violate a precondition (non-finite pixels, bad labels, ...).
    #[error("input error: {0}")]
    Input(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("weight loading error: {0}")]
    Load(String),
    #[error("class {class} ({source_tag}): need {needed} images, found {available} (short by {})", needed - available)]
    Shortfall {
        class: String,
        source_tag: String,
        needed: usize,
        available: usize,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn path_io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::io(path.display().to_string(), source)
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::Numeric(_) => 4,
            Error::Fold { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

impl From<cxrfuse_nn::NnError> for Error {
    fn from(e: cxrfuse_nn::NnError) -> Self {
        match e {
            cxrfuse_nn::NnError::Shape(m) => Error::Shape(m),
            other => Error::Input(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("json: {e}"))
    }
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn ensure_dir(path: &std::path::Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| Error::path_io(path, e))?;
    Ok(path.to_path_buf())
}
