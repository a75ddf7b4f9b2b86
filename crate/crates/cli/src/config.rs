//! Experiment configuration: a flat JSON file whose keys can all be
//! overridden from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use flagfed_core::data::SynthSpec;
use flagfed_core::federate::{AggregationStrategy, FederationConfig, Parallelism, DEFAULT_ALPHA, DEFAULT_ROUNDS};
use flagfed_core::metrics::DEFAULT_TARGET_FRACTION;
use flagfed_core::model::{AslConfig, TrainConfig};
use flagfed_core::partition::{Partitioner, DEFAULT_KL_EPSILON};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Fedavg,
    Flag,
    Local,
    Central,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding `train.jsonl` and `val.jsonl`.
    pub data: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading `data`.
    pub synth: Option<SynthSpec>,
    /// Validation rows generated alongside an inline `synth` spec.
    pub synth_val_samples: Option<usize>,
    pub n_clients: usize,
    pub partitioner: Partitioner,
    pub strategy: StrategyKind,
    pub alpha: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: Option<usize>,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
    pub asl_eps: f64,
    pub target_fraction: f64,
    pub kl_epsilon: f64,
    /// Path to a `centralized.json` used as the convergence baseline.
    pub baseline: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Write `round_<r>.params` checkpoints.
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let asl = AslConfig::default();
        Self {
            data: None,
            synth: None,
            synth_val_samples: None,
            n_clients: 10,
            partitioner: Partitioner::Cmda,
            strategy: StrategyKind::Flag,
            alpha: DEFAULT_ALPHA,
            rounds: DEFAULT_ROUNDS,
            local_epochs: train.local_epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            weight_decay: train.weight_decay,
            hidden: None,
            gamma_pos: asl.gamma_pos,
            gamma_neg: asl.gamma_neg,
            margin: asl.margin,
            asl_eps: asl.eps,
            target_fraction: DEFAULT_TARGET_FRACTION,
            kl_epsilon: DEFAULT_KL_EPSILON,
            baseline: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn strategy(&self) -> AggregationStrategy {
        match self.strategy {
            StrategyKind::Fedavg => AggregationStrategy::FedAvg,
            StrategyKind::Flag => AggregationStrategy::Flag { alpha: self.alpha },
            StrategyKind::Local => AggregationStrategy::LocalOnly,
            StrategyKind::Central => AggregationStrategy::Centralized,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            local_epochs: self.local_epochs,
            seed: self.seed,
        }
    }

    pub fn asl_config(&self) -> AslConfig {
        AslConfig {
            gamma_pos: self.gamma_pos,
            gamma_neg: self.gamma_neg,
            margin: self.margin,
            eps: self.asl_eps,
        }
    }

    pub fn federation_config(&self, parallelism: Parallelism) -> FederationConfig {
        FederationConfig {
            rounds: self.rounds,
            hidden: self.hidden,
            train: self.train_config(),
            asl: self.asl_config(),
            seed: self.seed,
            parallelism,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.data.is_none() && self.synth.is_none() {
            return Err(CliError::Config("set either `data` or `synth`".into()));
        }
        if let Some(dir) = &self.data {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("data directory {} does not exist", dir.display())));
            }
        }
        if let Some(path) = &self.baseline {
            if !path.is_file() {
                return Err(CliError::Config(format!("baseline file {} does not exist", path.display())));
            }
        }
        if let Some(spec) = &self.synth {
            spec.validate()?;
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "target_fraction must be in (0,1], got {}",
                self.target_fraction
            )));
        }
        if !(self.kl_epsilon > 0.0) {
            return Err(CliError::Config(format!("kl_epsilon must be > 0, got {}", self.kl_epsilon)));
        }
        if self.n_clients < 2 {
            return Err(CliError::Config(format!(
                "n_clients must be >= 2, got {}",
                self.n_clients
            )));
        }
        if self.rounds == 0 {
            return Err(CliError::Config("rounds must be >= 1".into()));
        }
        self.strategy().validate()?;
        self.train_config().validate()?;
        self.asl_config().validate()?;
        Ok(())
    }
}
