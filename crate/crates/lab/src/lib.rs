//! Experiment harness: TOML configs in, `summary.json` and CSV curves out.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, Overrides};
pub use run::{compute, run_subcommand, RunError, RunRecord, Subcommand};
