//! Experiment harness: configuration files, seeded runs with CSV traces,
//! validation suites and the matched-sample estimator comparison.

pub mod config;
pub mod experiment;
pub mod matched;
pub mod validation;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentError, ExperimentSummary, RunOptions};
