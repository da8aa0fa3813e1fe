//! Errors surfaced by the command-line tools and the service.

use std::io;
use std::path::Path;

use genkb_core::active::ActiveError;
use genkb_core::embed::EmbedError;
use genkb_core::eval::EvalError;
use genkb_core::{BackgroundError, KbError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model not found: {0}")]
    ModelNotFound(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed input: {0}")]
    Input(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Background(#[from] BackgroundError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for anything wrong with the configuration or its preconditions, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ModelNotFound(_) => 2,
            _ => 1,
        }
    }
}
