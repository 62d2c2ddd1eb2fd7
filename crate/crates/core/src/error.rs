use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Label { line: usize, message: String },

    #[error("line {line}: {field} = {value} is out of range")]
    LabelRange {
        line: usize,
        field: &'static str,
        value: f64,
    },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("cfg section {section} (line {line}): {message}")]
    Cfg {
        section: usize,
        line: usize,
        message: String,
    },

    #[error("weights: {0}")]
    Weights(String),

    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("unknown class name {0:?}")]
    UnknownClassName(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
