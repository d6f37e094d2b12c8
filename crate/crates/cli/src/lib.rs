//! Command-line front end: configuration, experiment dispatch and output.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{parse_config, ConfigError, RunConfig};
pub use experiments::{compute, run, Experiment, Outcome, RunError, RunSummary};
