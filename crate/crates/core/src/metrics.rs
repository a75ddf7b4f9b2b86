//! Average precision, mAP, per-round client/global aggregates and
//! rounds-to-target convergence.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::federate::FederationState;
use crate::model;
use crate::partition::ClientShard;

/// Default convergence target as a fraction of the centralized mAP.
pub const DEFAULT_TARGET_FRACTION: f64 = 0.8;

/// Mean of precision-at-rank over the positive items, ranking by descending
/// score with ties broken by ascending index. `None` when there is no
/// positive item.
pub fn average_precision(scores: &[f64], targets: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), targets.len(), "scores and targets differ in length");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps index order among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if targets[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean AP over the labels that have at least one positive.
pub fn mean_average_precision(probs: ArrayView2<'_, f64>, targets: &LabelMatrix) -> Result<f64> {
    if probs.dim() != (targets.rows(), targets.cols()) {
        return Err(Error::dim(format!(
            "scores {:?} vs targets ({}, {})",
            probs.dim(),
            targets.rows(),
            targets.cols()
        )));
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut column = vec![0u8; targets.rows()];
    for (j, scores) in probs.columns().into_iter().enumerate() {
        for (i, t) in column.iter_mut().enumerate() {
            *t = targets.get(i, j);
        }
        let scores = scores.to_vec();
        if let Some(ap) = average_precision(&scores, &column) {
            sum += ap;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::UndefinedMap("no label has a positive target".into()));
    }
    Ok(sum / counted as f64)
}

/// Metrics logged after one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// mAP of each client's own model on its validation shard.
    pub per_client_map: Vec<f64>,
    /// mAP of the global model on each client's validation shard; absent when
    /// nothing is aggregated.
    pub global_map_per_client: Option<Vec<f64>>,
    pub client_losses: Vec<f64>,
    pub mean_train_loss: f64,
    pub wall_seconds: f64,
}

impl RoundRecord {
    /// Mean of the clients' own-model mAP.
    pub fn amap(&self) -> f64 {
        mean(&self.per_client_map)
    }

    /// Worst client's own-model mAP.
    pub fn wmap(&self) -> f64 {
        self.per_client_map.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean of the global model's mAP over clients.
    pub fn gmap(&self) -> Option<f64> {
        self.global_map_per_client.as_deref().map(mean)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluate every client's current model, and the global model when there is
/// one, on each client's validation shard. Loss and timing fields are left at
/// zero for the caller to fill in.
pub fn evaluate_round(state: &FederationState, shards: &[ClientShard]) -> Result<RoundRecord> {
    if state.client_params.len() != shards.len() {
        return Err(Error::dim(format!(
            "{} client models for {} shards",
            state.client_params.len(),
            shards.len()
        )));
    }
    let score = |params: &model::ModelParams, shard: &ClientShard| -> Result<f64> {
        if shard.val.is_empty() {
            return Err(Error::UndefinedMap("empty validation shard".into()));
        }
        let probs = model::predict(params, &shard.val)?;
        mean_average_precision(probs.view(), shard.val.labels())
    };
    let per_client_map = shards
        .iter()
        .zip(&state.client_params)
        .map(|(s, p)| score(p, s).map_err(|e| e.in_client(s.client_id, state.round)))
        .collect::<Result<Vec<_>>>()?;
    let global_map_per_client = if state.has_global() {
        Some(
            shards
                .iter()
                .map(|s| score(&state.global_params, s).map_err(|e| e.in_client(s.client_id, state.round)))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(RoundRecord {
        round: state.round,
        per_client_map,
        global_map_per_client,
        client_losses: vec![0.0; shards.len()],
        mean_train_loss: 0.0,
        wall_seconds: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub target_map: f64,
    /// First round (1-based) whose AmAP reaches the target; `None` = never.
    pub rounds_to_target: Option<usize>,
    pub epochs_to_target: Option<usize>,
    pub best_map: f64,
    pub best_round: usize,
}

/// First round at which AmAP reaches `target_fraction × centralized_map`,
/// plus the best round as a fallback.
pub fn convergence(
    log: &[RoundRecord],
    target_fraction: f64,
    centralized_map: f64,
    local_epochs: usize,
) -> Result<ConvergenceResult> {
    if log.is_empty() {
        return Err(Error::config("convergence needs a non-empty round log"));
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::config(format!(
            "target_fraction must be in (0,1], got {target_fraction}"
        )));
    }
    let target_map = target_fraction * centralized_map;
    let rounds_to_target = log.iter().find(|r| r.amap() >= target_map).map(|r| r.round);
    let (best_round, best_map) = log
        .iter()
        .map(|r| (r.round, r.amap()))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(ConvergenceResult {
        target_map,
        rounds_to_target,
        epochs_to_target: rounds_to_target.map(|r| r * local_epochs),
        best_map,
        best_round,
    })
}
