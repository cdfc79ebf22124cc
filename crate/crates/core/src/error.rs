use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that must agree do not, or a dimension is zero.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A scalar argument is outside its accepted range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A value violates the mathematical domain of an operation
    /// (e.g. a negative amplitude).
    #[error("domain error: {0}")]
    Domain(String),

    /// An input is well-formed but does not satisfy an operation's precondition.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// Label data contains a value that is neither a class index nor ignore.
    #[error("data error: {0}")]
    Data(String),

    /// A serialized file is malformed. `field` names the offending header field
    /// or payload section.
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    /// Running the requested work would exceed the configured memory budget.
    #[error("memory budget error: {0}")]
    Budget(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }
}
