//! Experiment harness: configuration, pipelines and result files.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, OutputFormat};
pub use experiments::{run, HarnessError};
pub use output::{Cell, ResultRecord, Table};
