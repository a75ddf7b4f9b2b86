//! k-modes clustering over binary label vectors.
//!
//! Dissimilarity is the mismatch count between two label vectors; a center's
//! coordinates are the per-cluster modes. Ties are fixed for reproducibility:
//! the nearest center is the lowest id among equals, and a 50/50 mode
//! resolves to 1.

use rand::seq::SliceRandom;
use std::collections::HashSet;

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_MAX_ITER: usize = 100;
/// Seeded initializations tried by [`fit_restarts`] when none is given.
pub const DEFAULT_RESTARTS: usize = 10;

/// Number of coordinates where `x` and `y` differ.
pub fn dissimilarity(x: &[u8], y: &[u8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "dissimilarity of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(mismatches(x, y))
}

#[inline]
fn mismatches(x: &[u8], y: &[u8]) -> usize {
    x.iter().zip(y).filter(|(a, b)| a != b).count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub indices: Vec<usize>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn cluster_sizes(&self, k: usize) -> Vec<usize> {
        let mut sizes = vec![0; k];
        for &c in &self.indices {
            sizes[c] += 1;
        }
        sizes
    }

    /// Row indices belonging to each of `k` clusters, in ascending order.
    pub fn members(&self, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); k];
        for (i, &c) in self.indices.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KModesModel {
    k: usize,
    centers: LabelMatrix,
    iterations_run: usize,
    total_dissimilarity: u64,
    /// Objective after each (assign, update) iteration.
    objective_trace: Vec<u64>,
}

impl KModesModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn centers(&self) -> &LabelMatrix {
        &self.centers
    }

    pub fn center(&self, c: usize) -> &[u8] {
        self.centers.row(c)
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    pub fn total_dissimilarity(&self) -> u64 {
        self.total_dissimilarity
    }

    pub fn objective_trace(&self) -> &[u64] {
        &self.objective_trace
    }

    /// Nearest center id and its dissimilarity.
    pub fn nearest(&self, row: &[u8]) -> (usize, usize) {
        nearest(&self.centers, row)
    }
}

fn nearest(centers: &LabelMatrix, row: &[u8]) -> (usize, usize) {
    let mut best = (0, usize::MAX);
    for (c, center) in centers.iter_rows().enumerate() {
        let d = mismatches(center, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(centers: &LabelMatrix, labels: &LabelMatrix) -> Vec<usize> {
    labels.iter_rows().map(|r| nearest(centers, r).0).collect()
}

fn objective(centers: &LabelMatrix, labels: &LabelMatrix, assignment: &[usize]) -> u64 {
    labels
        .iter_rows()
        .zip(assignment)
        .map(|(r, &c)| mismatches(centers.row(c), r) as u64)
        .sum()
}

/// Recompute modes in place. Empty clusters are reseeded with the row
/// farthest from its current center (taken from a cluster with more than one
/// member), and that row moves into the reseeded cluster.
fn update(centers: &mut [u8], k: usize, labels: &LabelMatrix, assignment: &mut [usize]) {
    let l = labels.cols();
    let mut ones = vec![0usize; k * l];
    let mut sizes = vec![0usize; k];
    for (row, &c) in labels.iter_rows().zip(assignment.iter()) {
        sizes[c] += 1;
        for (acc, &b) in ones[c * l..(c + 1) * l].iter_mut().zip(row) {
            *acc += usize::from(b);
        }
    }
    for c in 0..k {
        if sizes[c] == 0 {
            continue;
        }
        for j in 0..l {
            centers[c * l + j] = u8::from(2 * ones[c * l + j] >= sizes[c]);
        }
    }

    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let farthest = labels
            .iter_rows()
            .enumerate()
            .filter(|&(i, _)| sizes[assignment[i]] > 1)
            .map(|(i, r)| {
                let a = assignment[i];
                (i, mismatches(&centers[a * l..(a + 1) * l], r))
            })
            // max by distance, lowest index among equals
            .fold(None, |best: Option<(usize, usize)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = farthest {
            sizes[assignment[i]] -= 1;
            sizes[c] = 1;
            assignment[i] = c;
            centers[c * l..(c + 1) * l].copy_from_slice(labels.row(i));
        }
    }
}

/// Pick `k` initial rows: a seeded shuffle of row indices, preferring rows
/// whose content has not been chosen yet.
fn initial_rows(labels: &LabelMatrix, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.rows()).collect();
    order.shuffle(&mut seed::rng(seed, &[0x6b6d]));
    let mut seen: HashSet<&[u8]> = HashSet::new();
    let mut chosen = Vec::with_capacity(k);
    let mut dupes = Vec::new();
    for &i in &order {
        if chosen.len() == k {
            break;
        }
        if seen.insert(labels.row(i)) {
            chosen.push(i);
        } else {
            dupes.push(i);
        }
    }
    chosen.extend(dupes.into_iter().take(k - chosen.len()));
    chosen
}

/// Fit k-modes with seeded initialization from `k` distinct rows.
pub fn fit(
    labels: &LabelMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(KModesModel, ClusterAssignment)> {
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    if k > labels.rows() {
        return Err(Error::config(format!(
            "k ({k}) exceeds the number of rows ({})",
            labels.rows()
        )));
    }
    let init = labels.select(&initial_rows(labels, k, seed))?;
    fit_from_centers(labels, init, max_iter)
}

/// Run [`fit`] from `restarts` seeded initializations and keep the lowest
/// total dissimilarity (earliest restart on ties). Restart 0 uses `seed`
/// itself, so a single restart is identical to [`fit`].
pub fn fit_restarts(
    labels: &LabelMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<(KModesModel, ClusterAssignment)> {
    if restarts == 0 {
        return Err(Error::config("restarts must be >= 1"));
    }
    let mut best = fit(labels, k, seed, max_iter)?;
    for r in 1..restarts {
        let cand = fit(labels, k, seed::derive(seed, &[0x7273, r as u64]), max_iter)?;
        if cand.0.total_dissimilarity < best.0.total_dissimilarity {
            best = cand;
        }
    }
    Ok(best)
}

/// Fit k-modes starting from the given centers (one row per cluster).
pub fn fit_from_centers(
    labels: &LabelMatrix,
    initial_centers: LabelMatrix,
    max_iter: usize,
) -> Result<(KModesModel, ClusterAssignment)> {
    if max_iter == 0 {
        return Err(Error::config("max_iter must be >= 1"));
    }
    if initial_centers.cols() != labels.cols() {
        return Err(Error::dim(format!(
            "centers have {} labels, data has {}",
            initial_centers.cols(),
            labels.cols()
        )));
    }
    let k = initial_centers.rows();
    if k > labels.rows() {
        return Err(Error::config(format!(
            "k ({k}) exceeds the number of rows ({})",
            labels.rows()
        )));
    }
    let l = labels.cols();
    let mut centers = initial_centers;
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter {
        let next = assign(&centers, labels);
        if next == assignment {
            break;
        }
        assignment = next;
        iterations += 1;

        let mut bits = centers.as_slice().to_vec();
        update(&mut bits, k, labels, &mut assignment);
        centers = LabelMatrix::new(k, l, bits)?;

        let obj = objective(&centers, labels, &assignment);
        debug_assert!(
            trace.last().is_none_or(|&prev| obj <= prev),
            "k-modes objective increased: {trace:?} -> {obj}"
        );
        trace.push(obj);
    }

    let total = objective(&centers, labels, &assignment);
    Ok((
        KModesModel {
            k,
            centers,
            iterations_run: iterations,
            total_dissimilarity: total,
            objective_trace: trace,
        },
        ClusterAssignment { indices: assignment },
    ))
}

/// Assign rows to the nearest fixed center.
pub fn transform(model: &KModesModel, labels: &LabelMatrix) -> Result<ClusterAssignment> {
    if labels.cols() != model.centers.cols() {
        return Err(Error::dim(format!(
            "model has {} labels, data has {}",
            model.centers.cols(),
            labels.cols()
        )));
    }
    Ok(ClusterAssignment {
        indices: assign(&model.centers, labels),
    })
}
