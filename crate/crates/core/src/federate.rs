//! Federated round loop and server-side aggregation.
//!
//! Each round every client starts from the broadcast global model (or, for
//! local-only training, from its own previous model), trains locally, and the
//! server aggregates the uploaded parameters. FLAG weights clients by their
//! label statistics, collected once before the first round.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, MultiLabelDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, RoundRecord};
use crate::model::{self, AslConfig, ModelParams, ModelShape, TrainConfig};
use crate::partition::ClientShard;
use crate::seed;

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_ROUNDS: usize = 10;

/// Environment variable capping client-training parallelism (0 = serial).
pub const THREADS_ENV: &str = "FLAGFED_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AggregationStrategy {
    FedAvg,
    Flag { alpha: f64 },
    LocalOnly,
    Centralized,
}

impl AggregationStrategy {
    pub fn validate(&self) -> Result<()> {
        if let AggregationStrategy::Flag { alpha } = *self {
            check_alpha(alpha)?;
        }
        Ok(())
    }

    /// Short name used on the command line and in output files.
    pub fn name(&self) -> &'static str {
        match self {
            AggregationStrategy::FedAvg => "fedavg",
            AggregationStrategy::Flag { .. } => "flag",
            AggregationStrategy::LocalOnly => "local",
            AggregationStrategy::Centralized => "central",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationStrategy::Flag { alpha } => write!(f, "flag(alpha={alpha})"),
            other => f.write_str(other.name()),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must be in [0,1], got {alpha}")));
    }
    Ok(())
}

/// Per-label positive counts a client reports to the server. Carries no
/// per-sample information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    client_id: usize,
    positive_counts: Vec<u64>,
}

impl LabelStats {
    /// Counts reported from outside the simulator; rejects negative entries.
    pub fn new(client_id: usize, counts: &[i64]) -> Result<Self> {
        let positive_counts = counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                u64::try_from(c).map_err(|_| {
                    Error::Integrity(format!("client {client_id}: label {j} has negative count {c}"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            client_id,
            positive_counts,
        })
    }

    pub fn from_labels(client_id: usize, labels: &LabelMatrix) -> Self {
        Self {
            client_id,
            positive_counts: labels.column_counts(),
        }
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn positive_counts(&self) -> &[u64] {
        &self.positive_counts
    }
}

/// Label weight `Σ_l count_l^α`, taking `0^α = 0` for every α, so α = 0
/// counts the distinct labels present and α = 1 the total positives.
pub fn label_weight(stats: &LabelStats, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(stats
        .positive_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64).powf(alpha))
        .sum())
}

/// Coordinate-wise `Σ_c (w_c / Σw) θ_c`.
pub fn aggregate_weighted(client_params: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = client_params
        .first()
        .ok_or_else(|| Error::config("aggregation needs at least one client"))?;
    if client_params.len() != weights.len() {
        return Err(Error::dim(format!(
            "{} parameter sets but {} weights",
            client_params.len(),
            weights.len()
        )));
    }
    let shape = first.shape();
    if let Some(p) = client_params.iter().find(|p| p.shape() != shape) {
        return Err(Error::dim(format!(
            "cannot aggregate shape {:?} with {shape:?}",
            p.shape()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::DegenerateWeights(format!("invalid weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights("all aggregation weights are zero".into()));
    }
    let mut out = vec![0.0; shape.param_count()];
    for (p, &w) in client_params.iter().zip(weights) {
        let share = w / total;
        for (acc, &v) in out.iter_mut().zip(p.values()) {
            *acc += share * v;
        }
    }
    ModelParams::new(shape, out)
}

pub fn aggregate_flag(client_params: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    aggregate_weighted(client_params, weights)
}

/// FedAvg: weights are the clients' sample counts.
pub fn aggregate_fedavg(client_params: &[&ModelParams], sample_counts: &[usize]) -> Result<ModelParams> {
    let weights: Vec<f64> = sample_counts.iter().map(|&n| n as f64).collect();
    aggregate_weighted(client_params, &weights)
}

/// How many threads train clients concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Serial,
    Threads(usize),
    #[default]
    Max,
}

impl Parallelism {
    /// Parse a `FLAGFED_THREADS` value: unset = all cores, `0` = serial.
    pub fn from_env_value(value: Option<&str>) -> Result<Self> {
        match value.map(str::trim) {
            None | Some("") => Ok(Parallelism::Max),
            Some(v) => match v.parse::<usize>() {
                Ok(0) => Ok(Parallelism::Serial),
                Ok(n) => Ok(Parallelism::Threads(n)),
                Err(_) => Err(Error::config(format!("{THREADS_ENV} must be a count, got {v:?}"))),
            },
        }
    }

    pub fn from_env() -> Result<Self> {
        Self::from_env_value(std::env::var(THREADS_ENV).ok().as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub rounds: usize,
    pub hidden: Option<usize>,
    pub train: TrainConfig,
    pub asl: AslConfig,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            hidden: None,
            train: TrainConfig::default(),
            asl: AslConfig::default(),
            seed: 0,
            parallelism: Parallelism::Max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    pub strategy: AggregationStrategy,
    pub global_params: ModelParams,
    pub client_params: Vec<ModelParams>,
    pub round: usize,
    pub log: Vec<RoundRecord>,
}

impl FederationState {
    /// Whether `global_params` is a trained model worth evaluating.
    pub fn has_global(&self) -> bool {
        self.strategy != AggregationStrategy::LocalOnly
    }
}

const INIT_TAG: u64 = 0x494e_4954;
const CENTRAL_TAG: u64 = u64::MAX;

fn client_train_config(cfg: &FederationConfig, round: usize, client: u64) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(cfg.seed, &[round as u64, client]),
        ..cfg.train
    }
}

fn map_clients<T: Send>(
    parallelism: Parallelism,
    pool: Option<&rayon::ThreadPool>,
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = match (parallelism, pool) {
        (Parallelism::Serial, _) | (_, None) => (0..n).map(&f).collect(),
        (_, Some(pool)) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
    };
    results.into_iter().collect()
}

/// Run the full federation and return its final state, including the round log.
pub fn run_federation(
    shards: &[ClientShard],
    strategy: AggregationStrategy,
    cfg: &FederationConfig,
) -> Result<FederationState> {
    run_federation_with(shards, strategy, cfg, |_| Ok(()))
}

/// As [`run_federation`], calling `on_round` after every round is evaluated.
pub fn run_federation_with(
    shards: &[ClientShard],
    strategy: AggregationStrategy,
    cfg: &FederationConfig,
    mut on_round: impl FnMut(&FederationState) -> Result<()>,
) -> Result<FederationState> {
    strategy.validate()?;
    cfg.train.validate()?;
    cfg.asl.validate()?;
    if cfg.rounds == 0 {
        return Err(Error::config("rounds must be >= 1"));
    }
    let min_clients = if strategy == AggregationStrategy::Centralized { 1 } else { 2 };
    if shards.len() < min_clients {
        return Err(Error::config(format!(
            "{strategy} needs at least {min_clients} shards, got {}",
            shards.len()
        )));
    }
    let first = &shards[0].train;
    let (d, l) = (first.n_features(), first.n_labels());
    if let Some(s) = shards
        .iter()
        .find(|s| s.train.n_features() != d || s.train.n_labels() != l || s.val.n_labels() != l)
    {
        return Err(Error::dim(format!("client {} disagrees on D or L", s.client_id)));
    }
    let shape = match cfg.hidden {
        Some(h) => ModelShape::with_hidden(d, l, h),
        None => ModelShape::linear(d, l),
    };
    let init = model::init_params(shape, seed::derive(cfg.seed, &[INIT_TAG]))?;

    let pool = match cfg.parallelism {
        Parallelism::Serial => None,
        Parallelism::Threads(n) => Some(n),
        Parallelism::Max => Some(0),
    }
    .map(|n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))
    })
    .transpose()?;

    // Clients report label statistics once; their data never changes.
    let weights: Vec<f64> = match strategy {
        AggregationStrategy::Flag { alpha } => shards
            .iter()
            .map(|s| label_weight(&LabelStats::from_labels(s.client_id, s.train.labels()), alpha))
            .collect::<Result<_>>()?,
        _ => shards.iter().map(|s| s.train.len() as f64).collect(),
    };
    let pooled = if strategy == AggregationStrategy::Centralized {
        let parts: Vec<&MultiLabelDataset> = shards.iter().map(|s| &s.train).collect();
        Some(MultiLabelDataset::concat(&parts)?)
    } else {
        None
    };

    let mut state = FederationState {
        strategy,
        global_params: init.clone(),
        client_params: vec![init; shards.len()],
        round: 0,
        log: Vec::with_capacity(cfg.rounds),
    };

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let client_losses = if let Some(pooled) = &pooled {
            let tcfg = client_train_config(cfg, round, CENTRAL_TAG);
            let (params, loss) = model::train_local(&state.global_params, pooled, &tcfg, &cfg.asl)
                .map_err(|e| e.in_client(0, round))?;
            state.client_params = vec![params.clone(); shards.len()];
            state.global_params = params;
            vec![loss; shards.len()]
        } else {
            let starts: Vec<&ModelParams> = match strategy {
                AggregationStrategy::LocalOnly => state.client_params.iter().collect(),
                _ => vec![&state.global_params; shards.len()],
            };
            let trained = map_clients(cfg.parallelism, pool.as_ref(), shards.len(), |c| {
                let tcfg = client_train_config(cfg, round, shards[c].client_id as u64);
                model::train_local(starts[c], &shards[c].train, &tcfg, &cfg.asl)
                    .map_err(|e| e.in_client(shards[c].client_id, round))
            })?;
            let (params, losses): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
            if strategy != AggregationStrategy::LocalOnly {
                let refs: Vec<&ModelParams> = params.iter().collect();
                state.global_params = aggregate_weighted(&refs, &weights)?;
            }
            state.client_params = params;
            losses
        };
        state.round = round;

        let mut record = metrics::evaluate_round(&state, shards)?;
        record.mean_train_loss = client_losses.iter().sum::<f64>() / client_losses.len() as f64;
        record.client_losses = client_losses;
        record.wall_seconds = started.elapsed().as_secs_f64();
        log::info!(
            "round {round}: AmAP {:.4} WmAP {:.4} GmAP {} loss {:.5}",
            record.amap(),
            record.wmap(),
            record.gmap().map_or_else(|| "-".to_string(), |g| format!("{g:.4}")),
            record.mean_train_loss
        );
        state.log.push(record);
        on_round(&state)?;
    }
    Ok(state)
}
