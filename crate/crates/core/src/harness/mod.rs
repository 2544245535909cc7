//! Configuration, experiment orchestration and file outputs.

pub mod config;
pub mod experiments;

pub use config::{load_config, parse_config, ExperimentConfig, Scheme};
pub use experiments::{run_oracle_check, run_sweep, run_train, OracleCheckReport, RunRecord};
