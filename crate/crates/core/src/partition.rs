//! Client data allocation and label-distribution heterogeneity analysis.
//!
//! [`cmda_split`] clusters training label vectors with k-modes (one cluster
//! per client) and routes validation rows through the same centers.
//! [`random_split`] is the i.i.d. baseline. [`heterogeneity_report`] measures
//! how different the resulting clients' label distributions are.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, MultiLabelDataset};
use crate::error::{Error, Result};
use crate::kmodes::{self, KModesModel};
use crate::seed;

pub const DEFAULT_KL_EPSILON: f64 = 1e-6;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: MultiLabelDataset,
    pub val: MultiLabelDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioner {
    Cmda,
    Random,
}

impl fmt::Display for Partitioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partitioner::Cmda => "cmda",
            Partitioner::Random => "random",
        })
    }
}

impl std::str::FromStr for Partitioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmda" => Ok(Partitioner::Cmda),
            "random" => Ok(Partitioner::Random),
            other => Err(Error::config(format!(
                "unknown partitioner {other:?} (expected cmda or random)"
            ))),
        }
    }
}

impl Partitioner {
    pub fn split(
        self,
        train: &MultiLabelDataset,
        val: &MultiLabelDataset,
        n_clients: usize,
        seed: u64,
    ) -> Result<Vec<ClientShard>> {
        match self {
            Partitioner::Cmda => cmda_split(train, val, n_clients, seed),
            Partitioner::Random => random_split(train, val, n_clients, seed),
        }
    }
}

fn check_split_inputs(train: &MultiLabelDataset, val: &MultiLabelDataset, n_clients: usize) -> Result<()> {
    if n_clients < 2 {
        return Err(Error::config(format!(
            "federation needs at least 2 clients, got {n_clients}"
        )));
    }
    if train.n_labels() != val.n_labels() || train.n_features() != val.n_features() {
        return Err(Error::dim(format!(
            "train has D={},L={} but val has D={},L={}",
            train.n_features(),
            train.n_labels(),
            val.n_features(),
            val.n_labels()
        )));
    }
    if n_clients > train.len() {
        return Err(Error::config(format!(
            "{n_clients} clients but only {} training rows",
            train.len()
        )));
    }
    if n_clients > val.len() {
        return Err(Error::config(format!(
            "{n_clients} clients but only {} validation rows",
            val.len()
        )));
    }
    Ok(())
}

/// Fill empty clients by moving one row each from a client holding more than
/// one. `pick` receives the empty client, the candidate rows, the current
/// assignment and client sizes, and returns the row to move.
fn repair_empty(
    assignment: &mut [usize],
    n_clients: usize,
    mut pick: impl FnMut(usize, &[usize], &[usize], &[usize]) -> usize,
) {
    let mut sizes = vec![0usize; n_clients];
    for &c in assignment.iter() {
        sizes[c] += 1;
    }
    for c in 0..n_clients {
        if sizes[c] > 0 {
            continue;
        }
        let candidates: Vec<usize> = (0..assignment.len())
            .filter(|&i| sizes[assignment[i]] > 1)
            .collect();
        let i = pick(c, &candidates, assignment, &sizes);
        sizes[assignment[i]] -= 1;
        sizes[c] += 1;
        assignment[i] = c;
    }
}

/// Row nearest to the client's center among `candidates`; lowest index wins ties.
fn nearest_to_center(model: &KModesModel, labels: &LabelMatrix, client: usize, candidates: &[usize]) -> usize {
    let center = model.center(client);
    *candidates
        .iter()
        .min_by_key(|&&i| (kmodes::dissimilarity(center, labels.row(i)).unwrap_or(usize::MAX), i))
        .expect("a non-empty client exists while another is empty")
}

fn build_shards(
    train: &MultiLabelDataset,
    val: &MultiLabelDataset,
    n_clients: usize,
    train_asg: &[usize],
    val_asg: &[usize],
) -> Result<Vec<ClientShard>> {
    let members = |asg: &[usize]| {
        let mut out = vec![Vec::new(); n_clients];
        for (i, &c) in asg.iter().enumerate() {
            out[c].push(i);
        }
        out
    };
    let train_members = members(train_asg);
    let val_members = members(val_asg);
    train_members
        .iter()
        .zip(&val_members)
        .enumerate()
        .map(|(client_id, (tr, va))| {
            Ok(ClientShard {
                client_id,
                train: train.select(tr)?,
                val: val.select(va)?,
            })
        })
        .collect()
}

/// Clustering-based client allocation.
pub fn cmda_split(
    train: &MultiLabelDataset,
    val: &MultiLabelDataset,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    check_split_inputs(train, val, n_clients)?;
    let (model, train_asg) = kmodes::fit_restarts(
        train.labels(),
        n_clients,
        seed,
        kmodes::DEFAULT_MAX_ITER,
        kmodes::DEFAULT_RESTARTS,
    )?;
    let val_asg = kmodes::transform(&model, val.labels())?;
    let mut train_asg = train_asg.indices;
    let mut val_asg = val_asg.indices;
    repair_empty(&mut train_asg, n_clients, |c, cand, _, _| {
        nearest_to_center(&model, train.labels(), c, cand)
    });
    repair_empty(&mut val_asg, n_clients, |c, cand, _, _| {
        nearest_to_center(&model, val.labels(), c, cand)
    });
    log::debug!(
        "k-modes: {} iterations, objective {}",
        model.iterations_run(),
        model.total_dissimilarity()
    );
    build_shards(train, val, n_clients, &train_asg, &val_asg)
}

/// Uniform random allocation of every row to a client.
///
/// Empty clients take the highest-index row of the currently largest client.
pub fn random_split(
    train: &MultiLabelDataset,
    val: &MultiLabelDataset,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    check_split_inputs(train, val, n_clients)?;
    let mut rng = seed::rng(seed, &[0x7261_6e64]);
    let mut draw = |n: usize| -> Vec<usize> { (0..n).map(|_| rng.random_range(0..n_clients)).collect() };
    let mut train_asg = draw(train.len());
    let mut val_asg = draw(val.len());
    for asg in [&mut train_asg, &mut val_asg] {
        repair_empty(asg, n_clients, |_, cand, asg, sizes| {
            *cand
                .iter()
                .max_by_key(|&&i| (sizes[asg[i]], i))
                .expect("a non-empty client exists while another is empty")
        });
    }
    build_shards(train, val, n_clients, &train_asg, &val_asg)
}

/// Normalized positive-label distribution of a label matrix.
pub fn ldist(labels: &LabelMatrix) -> Result<Vec<f64>> {
    let counts = labels.column_counts();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::DegenerateDistribution(
            "label matrix has no positive labels".into(),
        ));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn smooth(p: &[f64], epsilon: f64) -> Vec<f64> {
    let z = 1.0 + epsilon * p.len() as f64;
    p.iter().map(|&v| (v + epsilon) / z).collect()
}

fn check_probability(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Domain(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Symmetrized Kullback–Leibler divergence in nats,
/// `(KL(p̃‖q̃) + KL(q̃‖p̃)) / 2`, where `p̃`, `q̃` add `epsilon` to every entry
/// and renormalize.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim(format!(
            "distributions of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config(format!("epsilon must be > 0, got {epsilon}")));
    }
    check_probability("p", p)?;
    check_probability("q", q)?;
    let ps = smooth(p, epsilon);
    let qs = smooth(q, epsilon);
    // (a ln(a/b) + b ln(b/a)) summed = Σ (a - b) ln(a/b), symmetric in (p, q).
    let sym: f64 = ps
        .iter()
        .zip(&qs)
        .map(|(&a, &b)| (a - b) * (a / b).ln())
        .sum();
    Ok((sym / 2.0).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub client_sizes: Vec<usize>,
    pub ldist: Vec<Vec<f64>>,
    pub kl_matrix: Vec<Vec<f64>>,
    pub total_kl: f64,
    pub epsilon: f64,
}

pub fn heterogeneity_report(shards: &[ClientShard], epsilon: f64) -> Result<HeterogeneityReport> {
    if shards.len() < 2 {
        return Err(Error::config(format!(
            "heterogeneity report needs at least 2 shards, got {}",
            shards.len()
        )));
    }
    let dists = shards
        .iter()
        .map(|s| {
            ldist(s.train.labels()).map_err(|_| {
                Error::DegenerateDistribution(format!(
                    "client {} has no positive training labels",
                    s.client_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = shards.len();
    let mut kl = vec![vec![0.0; n]; n];
    let mut upper_sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = kl_divergence(&dists[i], &dists[j], epsilon)?;
            kl[i][j] = v;
            kl[j][i] = v;
            upper_sum += v;
        }
    }
    let pairs = n * (n - 1) / 2;
    Ok(HeterogeneityReport {
        client_sizes: shards.iter().map(|s| s.train.len()).collect(),
        ldist: dists,
        kl_matrix: kl,
        total_kl: upper_sum / pairs as f64,
        epsilon,
    })
}
