use std::path::PathBuf;

use thiserror::Error;

use crate::fetch::FetchError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failures surfaced by the command-line tool.
///
/// Anything detected before computation starts is a validation error and
/// exits with status 2; failures during computation or while writing exit
/// with status 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {reason}", path.display())]
    Input { path: PathBuf, reason: String },

    #[error("invalid input: {0}")]
    Validation(#[source] tqx_core::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: tqx_core::Error,
    },

    #[error(transparent)]
    Fetch(#[from] FetchError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input { .. } | CliError::Validation(_) => 2,
            CliError::Stage { .. } | CliError::Fetch(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: impl Into<String>) -> impl FnOnce(tqx_core::Error) -> CliError {
        let stage = stage.into();
        move |source| CliError::Stage { stage, source }
    }
}
