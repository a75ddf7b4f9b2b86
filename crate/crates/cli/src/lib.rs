//! Experiment runner behind the `flagfed` binary: dataset synthesis,
//! partitioning, federated training, α sweeps and heterogeneity analysis.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, StrategyKind};
pub use error::{CliError, CliResult};
