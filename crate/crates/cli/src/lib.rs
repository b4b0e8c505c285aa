//! Experiment driver for the transformer filter and controller: config
//! loading, presets, the `synthesize` / `filter` / `control` / `sweep` /
//! `verify` commands and their PASS/FAIL reports.

pub mod commands;
pub mod config;
pub mod presets;
pub mod report;
pub mod verify;

pub use commands::{cmd_control, cmd_filter, cmd_sweep, cmd_synthesize, cmd_verify, Grid};
pub use config::{Experiment, ExperimentConfig, Overrides};
pub use report::{Check, Report};

/// Process exit codes.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] tfilter_core::Error),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}
