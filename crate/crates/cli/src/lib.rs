//! Experiment runner: configuration, staged pipeline with resumable
//! checksummed artifacts, the LOAO protocol and report emission.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::{run, RunOptions, Stage};
