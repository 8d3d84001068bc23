//! Command-line pipeline around `tqx_core`: run configuration, input
//! validation, orchestration, remote embedding retrieval and report
//! rendering.

pub mod commands;
pub mod config;
mod error;
pub mod fetch;
pub mod labels;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, Artifacts};
