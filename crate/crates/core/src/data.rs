//! Dataset types, the planted-theme synthetic generator, and dataset file I/O.
//!
//! On-disk format (UTF-8, LF line endings): a JSON header line
//! `{"N":..,"D":..,"L":..,"label_names":[..]}` followed by `N` lines of
//! `{"x":[D reals],"y":[ascending positive label indices]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Dense N×L binary label matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config(format!(
                "label matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if bits.len() != rows * cols {
            return Err(Error::dim(format!(
                "label matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                bits.len()
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Domain(format!(
                "label entry {} at flat index {pos} is not 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().position(|r| r.as_ref().len() != cols) {
            return Err(Error::dim(format!(
                "row {bad} has {} labels, expected {cols}",
                rows[bad].as_ref().len()
            )));
        }
        let bits = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, bits)
    }

    /// Build from sparse per-row positive index lists.
    pub fn from_positives(cols: usize, positives: &[Vec<usize>]) -> Result<Self> {
        let mut bits = vec![0u8; positives.len() * cols];
        for (i, row) in positives.iter().enumerate() {
            for &j in row {
                if j >= cols {
                    return Err(Error::dim(format!(
                        "row {i} has label index {j} >= {cols}"
                    )));
                }
                bits[i * cols + j] = 1;
            }
        }
        Self::new(positives.len(), cols, bits)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.bits.chunks_exact(self.cols)
    }

    /// Ascending indices of the positive labels in row `i`.
    pub fn positives(&self, i: usize) -> Vec<usize> {
        self.row(i)
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| (b == 1).then_some(j))
            .collect()
    }

    /// Number of positives per label (column sums).
    pub fn column_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.cols];
        for row in self.iter_rows() {
            for (c, &b) in counts.iter_mut().zip(row) {
                *c += u64::from(b);
            }
        }
        counts
    }

    pub fn total_positives(&self) -> u64 {
        self.bits.iter().map(|&b| u64::from(b)).sum()
    }

    /// Rows with no positive label.
    pub fn empty_rows(&self) -> usize {
        self.iter_rows().filter(|r| r.iter().all(|&b| b == 0)).count()
    }

    /// Dense 0/1 values as reals, for loss and metric computation.
    pub fn to_f64(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(i, j)| f64::from(self.get(i, j)))
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut bits = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            bits.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, bits)
    }
}

/// Paired feature matrix and label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    features: Array2<f64>,
    labels: LabelMatrix,
    label_names: Vec<String>,
}

impl MultiLabelDataset {
    pub fn new(features: Array2<f64>, labels: LabelMatrix, label_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.rows() {
            return Err(Error::dim(format!(
                "{} feature rows but {} label rows",
                features.nrows(),
                labels.rows()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::config("datasets need at least one feature"));
        }
        if label_names.len() != labels.cols() {
            return Err(Error::dim(format!(
                "{} label names for {} labels",
                label_names.len(),
                labels.cols()
            )));
        }
        if let Some(((i, j), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("feature ({i},{j}) is not finite: {v}")));
        }
        Ok(Self {
            features,
            labels,
            label_names,
        })
    }

    /// Default label names `label_0 .. label_{L-1}`.
    pub fn default_label_names(n_labels: usize) -> Vec<String> {
        (0..n_labels).map(|j| format!("label_{j}")).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows at `indices`, in the given order. `indices` must be non-empty.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(indices)?,
            label_names: self.label_names.clone(),
        })
    }

    /// Concatenate datasets that share feature and label dimensions.
    pub fn concat(parts: &[&MultiLabelDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("cannot concatenate zero datasets"))?;
        let (d, l) = (first.n_features(), first.n_labels());
        if let Some(p) = parts.iter().find(|p| p.n_features() != d || p.n_labels() != l) {
            return Err(Error::dim(format!(
                "cannot concatenate D={},L={} with D={d},L={l}",
                p.n_features(),
                p.n_labels()
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::dim(e.to_string()))?;
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut bits = Vec::with_capacity(n * l);
        for p in parts {
            bits.extend_from_slice(p.labels.as_slice());
        }
        Ok(Self {
            features,
            labels: LabelMatrix::new(n, l, bits)?,
            label_names: first.label_names.clone(),
        })
    }
}

/// Parameters of the planted-theme generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_labels: usize,
    pub n_features: usize,
    pub n_themes: usize,
    pub theme_overlap: f64,
    pub label_density: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            n_labels: 40,
            n_features: 32,
            n_themes: 10,
            theme_overlap: 0.1,
            label_density: 2,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be >= 1"));
        }
        if self.n_labels == 0 {
            return Err(Error::config("n_labels must be >= 1"));
        }
        if self.n_features == 0 {
            return Err(Error::config("n_features must be >= 1"));
        }
        if self.n_themes == 0 {
            return Err(Error::config("n_themes must be >= 1"));
        }
        if self.n_themes > self.n_labels {
            return Err(Error::config(format!(
                "n_themes ({}) must be <= n_labels ({})",
                self.n_themes, self.n_labels
            )));
        }
        if self.label_density == 0 {
            return Err(Error::config("label_density must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.theme_overlap) {
            return Err(Error::config(format!(
                "theme_overlap must be in [0,1], got {}",
                self.theme_overlap
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Contiguous label groups, sizes differing by at most one.
    pub fn theme_groups(&self) -> Vec<Range<usize>> {
        let base = self.n_labels / self.n_themes;
        let extra = self.n_labels % self.n_themes;
        let mut start = 0;
        (0..self.n_themes)
            .map(|g| {
                let len = base + usize::from(g < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }
}

/// A generated dataset together with its planted structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: MultiLabelDataset,
    /// Planted theme of every row.
    pub themes: Vec<usize>,
    pub theme_groups: Vec<Range<usize>>,
    /// Per-label prototype vectors (L×D), shared by every stream of a spec.
    pub prototypes: Array2<f64>,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticDataset> {
    generate_synthetic_stream(spec, 0)
}

/// Generate samples from sampling stream `stream`.
///
/// Every stream of the same spec shares label prototypes and theme groups,
/// so stream 0 and stream 1 behave as train and validation draws from one
/// distribution.
pub fn generate_synthetic_stream(spec: &SynthSpec, stream: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let (n, l, d) = (spec.n_samples, spec.n_labels, spec.n_features);
    let groups = spec.theme_groups();

    let mut proto_rng = seed::rng(spec.seed, &[0]);
    let mut prototypes = Array2::<f64>::zeros((l, d));
    for mut row in prototypes.rows_mut() {
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut proto_rng);
            }
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }

    let mut rng = seed::rng(spec.seed, &[1, stream]);
    let mut themes = Vec::with_capacity(n);
    let mut bits = vec![0u8; n * l];
    let mut features = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let theme = rng.random_range(0..spec.n_themes);
        let group = &groups[theme];
        let row = &mut bits[i * l..(i + 1) * l];
        let k = spec.label_density.min(group.len());
        for off in index::sample(&mut rng, group.len(), k) {
            row[group.start + off] = 1;
        }
        let foreign = l - group.len();
        if foreign > 0 && rng.random_bool(spec.theme_overlap) {
            let mut j = rng.random_range(0..foreign);
            if j >= group.start {
                j += group.len();
            }
            row[j] = 1;
        }

        let mut x = features.row_mut(i);
        for (j, _) in row.iter().enumerate().filter(|(_, &b)| b == 1) {
            x += &prototypes.row(j);
        }
        if spec.noise_std > 0.0 {
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise_std * z;
            }
        }
        themes.push(theme);
    }

    let labels = LabelMatrix::new(n, l, bits)?;
    let dataset = MultiLabelDataset::new(features, labels, MultiLabelDataset::default_label_names(l))?;
    Ok(SyntheticDataset {
        dataset,
        themes,
        theme_groups: groups,
        prototypes,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "L")]
    l: usize,
    label_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    x: Vec<f64>,
    y: Vec<usize>,
}

pub fn write_dataset<W: Write>(ds: &MultiLabelDataset, mut w: W) -> std::io::Result<()> {
    let header = Header {
        n: ds.len(),
        d: ds.n_features(),
        l: ds.n_labels(),
        label_names: ds.label_names.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for i in 0..ds.len() {
        let rec = Record {
            x: ds.feature_row(i).to_vec(),
            y: ds.labels.positives(i),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<MultiLabelDataset> {
    let mut lines = r.lines().enumerate().map(|(i, line)| (i + 1, line));
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let io_err = |e: std::io::Error| Error::io("<dataset stream>", e);

    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let header: Header =
        serde_json::from_str(&first.map_err(io_err)?).map_err(|e| parse_err(1, e.to_string()))?;
    if header.label_names.len() != header.l {
        return Err(parse_err(
            1,
            format!("{} label names for L={}", header.label_names.len(), header.l),
        ));
    }
    if header.n == 0 || header.d == 0 || header.l == 0 {
        return Err(parse_err(1, "N, D and L must all be >= 1".into()));
    }

    let mut features = Vec::with_capacity(header.n * header.d);
    let mut bits = Vec::with_capacity(header.n * header.l);
    let mut rows = 0usize;
    let mut empty = 0usize;
    for (lineno, line) in lines {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        rows += 1;
        if rows > header.n {
            return Err(Error::Integrity(format!(
                "header declares N={} but line {lineno} holds data row {rows}",
                header.n
            )));
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if rec.x.len() != header.d {
            return Err(parse_err(
                lineno,
                format!("x has {} values, expected D={}", rec.x.len(), header.d),
            ));
        }
        let mut row = vec![0u8; header.l];
        let mut prev: Option<usize> = None;
        for &j in &rec.y {
            if j >= header.l {
                return Err(parse_err(lineno, format!("label index {j} >= L={}", header.l)));
            }
            if prev.is_some_and(|p| p >= j) {
                return Err(parse_err(lineno, "y indices must be strictly ascending".into()));
            }
            prev = Some(j);
            row[j] = 1;
        }
        if rec.y.is_empty() {
            empty += 1;
        }
        features.extend(rec.x);
        bits.extend(row);
    }
    if rows != header.n {
        return Err(Error::Integrity(format!(
            "header declares N={} but body has {rows} rows",
            header.n
        )));
    }
    if empty > 0 {
        log::warn!("dataset has {empty} rows without any positive label");
    }
    let features = Array2::from_shape_vec((header.n, header.d), features)
        .map_err(|e| Error::dim(e.to_string()))?;
    MultiLabelDataset::new(
        features,
        LabelMatrix::new(header.n, header.l, bits)?,
        header.label_names,
    )
}

pub fn save_dataset(ds: &MultiLabelDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultiLabelDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
