use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Error, Debug)]
pub enum LdnnError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },
    #[error("training diverged at epoch {epoch} ({stage}): {detail}")]
    Divergence {
        epoch: usize,
        stage: String,
        detail: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model document error: {0}")]
    Document(String),
}

pub type Result<T> = std::result::Result<T, LdnnError>;

impl LdnnError {
    pub(crate) fn shape(context: &'static str, expected: usize, found: usize) -> Self {
        LdnnError::Shape {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        LdnnError::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LdnnError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LdnnError::shape(context, expected, found))
    }
}
