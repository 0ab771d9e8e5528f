//! Configuration, experiment orchestration, evaluation and CSV reporting
//! on top of `sspda-core`.

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;

pub use config::{parse_config, ExperimentConfig, Method, Overrides};
pub use error::{CliError, ConfigError};
pub use eval::evaluate;
pub use experiment::{mean_std, run_experiment, ExperimentReport, RunReport};
