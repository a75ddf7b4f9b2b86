//! Small multi-label classifier: linear or one tanh hidden layer, a logistic
//! output per label, asymmetric loss, and AdamW local training.
//!
//! Parameters live in one flat vector so they can be averaged by the server.
//! Layout, row-major: linear `W[D×L], b[L]`; hidden
//! `W1[D×H], b1[H], W2[H×L], b2[L]`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Probabilities are kept this far from 0 and 1 so the loss stays finite.
const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_features: usize,
    pub n_labels: usize,
    pub hidden: Option<usize>,
}

impl ModelShape {
    pub fn linear(n_features: usize, n_labels: usize) -> Self {
        Self {
            n_features,
            n_labels,
            hidden: None,
        }
    }

    pub fn with_hidden(n_features: usize, n_labels: usize, hidden: usize) -> Self {
        Self {
            n_features,
            n_labels,
            hidden: Some(hidden),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_labels == 0 || self.hidden == Some(0) {
            return Err(Error::config(format!("model shape has a zero dimension: {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, l) = (self.n_features, self.n_labels);
        match self.hidden {
            None => d * l + l,
            Some(h) => d * h + h + h * l + l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("model parameters must be finite".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: ModelShape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.param_count()])
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Views of the weight matrices and bias vectors, input layer first.
    fn layers(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        layer_dims(&self.shape)
            .into_iter()
            .map(|(offset, rows, cols)| {
                let w = ArrayView2::from_shape((rows, cols), &self.values[offset..offset + rows * cols])
                    .expect("layout matches param_count");
                let b = ArrayView1::from(&self.values[offset + rows * cols..offset + rows * cols + cols]);
                (w, b)
            })
            .collect()
    }

    /// Bias slots, as indices into `values`.
    pub fn bias_indices(&self) -> Vec<usize> {
        layer_dims(&self.shape)
            .into_iter()
            .flat_map(|(offset, rows, cols)| offset + rows * cols..offset + rows * cols + cols)
            .collect()
    }
}

/// (offset, fan_in, fan_out) per layer.
fn layer_dims(shape: &ModelShape) -> Vec<(usize, usize, usize)> {
    let (d, l) = (shape.n_features, shape.n_labels);
    match shape.hidden {
        None => vec![(0, d, l)],
        Some(h) => vec![(0, d, h), (d * h + h, h, l)],
    }
}

/// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
pub fn init_params(shape: ModelShape, seed: u64) -> Result<ModelParams> {
    shape.validate()?;
    let mut rng = seed::rng(seed, &[0x696e_6974]);
    let mut values = vec![0.0; shape.param_count()];
    for (offset, fan_in, fan_out) in layer_dims(&shape) {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[offset..offset + fan_in * fan_out] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = scale * z;
        }
    }
    ModelParams::new(shape, values)
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

struct Activations {
    hidden: Option<Array2<f64>>,
    probs: Array2<f64>,
}

fn check_features(params: &ModelParams, features: &ArrayView2<'_, f64>) -> Result<()> {
    if features.ncols() != params.shape.n_features {
        return Err(Error::dim(format!(
            "model expects {} features, batch has {}",
            params.shape.n_features,
            features.ncols()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("features must be finite".into()));
    }
    Ok(())
}

fn run_forward(params: &ModelParams, features: ArrayView2<'_, f64>) -> Activations {
    let layers = params.layers();
    let hidden = match layers.as_slice() {
        [(w1, b1), _] => Some((features.dot(w1) + b1).mapv(f64::tanh)),
        _ => None,
    };
    let (w, b) = layers.last().expect("at least one layer");
    let logits = match &hidden {
        Some(h) => h.dot(w) + b,
        None => features.dot(w) + b,
    };
    Activations {
        hidden,
        probs: logits.mapv(sigmoid),
    }
}

/// Per-label probabilities for a batch of feature rows.
pub fn forward(params: &ModelParams, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_features(params, &features)?;
    Ok(run_forward(params, features).probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AslConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
    pub eps: f64,
}

impl Default for AslConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            margin: 0.05,
            eps: 1e-8,
        }
    }
}

impl AslConfig {
    /// Plain binary cross-entropy.
    pub fn bce() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            margin: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= self.gamma_pos && self.gamma_neg.is_finite()) {
            return Err(Error::config(format!(
                "ASL needs gamma_neg >= gamma_pos >= 0, got gamma_pos={} gamma_neg={}",
                self.gamma_pos, self.gamma_neg
            )));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::config(format!("ASL margin must be in [0,1), got {}", self.margin)));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return Err(Error::config(format!("ASL eps must be in (0, 1e-3], got {}", self.eps)));
        }
        Ok(())
    }
}

/// `x^g` and its derivative `g x^(g-1)`, with `x^0 = 1` and derivative 0 at g = 0.
fn pow_and_slope(x: f64, g: f64) -> (f64, f64) {
    if g == 0.0 {
        (1.0, 0.0)
    } else if x == 0.0 {
        (0.0, if g == 1.0 { 1.0 } else { 0.0 })
    } else {
        (x.powf(g), g * x.powf(g - 1.0))
    }
}

/// ln(clamp(x, eps, 1)) and its derivative in x.
fn clamped_log(x: f64, eps: f64) -> (f64, f64) {
    if x < eps {
        (eps.ln(), 0.0)
    } else if x > 1.0 {
        (0.0, 0.0)
    } else {
        (x.ln(), 1.0 / x)
    }
}

/// Asymmetric loss (mean over all B·L entries) and its gradient with respect
/// to the probabilities.
///
/// Positives contribute `(1-p)^γ⁺ ln p`; negatives use the shifted
/// probability `p_m = max(p - margin, 0)` and contribute `p_m^γ⁻ ln(1 - p_m)`.
/// The loss is the negated mean.
pub fn asl_loss(
    probs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    cfg: &AslConfig,
) -> Result<(f64, Array2<f64>)> {
    if probs.dim() != targets.dim() {
        return Err(Error::dim(format!(
            "probabilities {:?} vs targets {:?}",
            probs.dim(),
            targets.dim()
        )));
    }
    if let Some(p) = probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Domain(format!("probability {p} outside (0,1)")));
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Domain(format!("target {t} is not binary")));
    }
    let count = probs.len() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(probs.dim());
    for ((g, &p), &t) in grad.iter_mut().zip(probs.iter()).zip(targets.iter()) {
        let (term, dterm) = if t == 1.0 {
            let (focus, dfocus) = pow_and_slope(1.0 - p, cfg.gamma_pos);
            let (lg, dlg) = clamped_log(p, cfg.eps);
            (focus * lg, -dfocus * lg + focus * dlg)
        } else {
            let pm = p - cfg.margin;
            if pm <= 0.0 {
                (0.0, 0.0)
            } else {
                let (focus, dfocus) = pow_and_slope(pm, cfg.gamma_neg);
                let (lg, dlg) = clamped_log(1.0 - pm, cfg.eps);
                (focus * lg, dfocus * lg - focus * dlg)
            }
        };
        total += term;
        *g = -dterm / count;
    }
    Ok((-total / count, grad))
}

fn check_targets(targets: &ArrayView2<'_, f64>, batch: usize, n_labels: usize) -> Result<()> {
    if targets.dim() != (batch, n_labels) {
        return Err(Error::dim(format!(
            "targets {:?}, expected ({batch}, {n_labels})",
            targets.dim()
        )));
    }
    Ok(())
}

/// Loss of a batch and its gradient with respect to every parameter, in the
/// flat parameter layout.
pub fn loss_and_grad(
    params: &ModelParams,
    features: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    cfg: &AslConfig,
) -> Result<(f64, Vec<f64>)> {
    check_features(params, &features)?;
    check_targets(&targets, features.nrows(), params.shape.n_labels)?;
    let act = run_forward(params, features);
    let (loss, dprobs) = asl_loss(act.probs.view(), targets, cfg)?;
    let dlogits = dprobs * act.probs.mapv(|p| p * (1.0 - p));

    let mut grad = vec![0.0; params.values.len()];
    let layers = params.layers();
    let dims = layer_dims(&params.shape);
    let mut write_layer = |layer: usize, input: ArrayView2<'_, f64>, delta: &Array2<f64>| {
        let (offset, rows, cols) = dims[layer];
        let gw = input.t().dot(delta);
        let gb: Array1<f64> = delta.sum_axis(Axis(0));
        // `dot` may hand back a column-major result; copy in logical order
        for (g, &v) in grad[offset..offset + rows * cols].iter_mut().zip(gw.iter()) {
            *g = v;
        }
        for (g, &v) in grad[offset + rows * cols..offset + rows * cols + cols].iter_mut().zip(gb.iter()) {
            *g = v;
        }
    };
    match &act.hidden {
        None => write_layer(0, features, &dlogits),
        Some(h) => {
            write_layer(1, h.view(), &dlogits);
            let (w2, _) = &layers[1];
            let dh = dlogits.dot(&w2.t()) * h.mapv(|a| 1.0 - a * a);
            write_layer(0, features, &dh);
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub local_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            local_epochs: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::config("batch_size and local_epochs must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("invalid weight decay {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((theta, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *theta -= self.lr * (update + self.weight_decay * *theta);
        }
    }
}

/// Mini-batch AdamW training on one client's data. Returns the new
/// parameters and the mean loss of the final epoch.
pub fn train_local(
    params: &ModelParams,
    shard: &MultiLabelDataset,
    tcfg: &TrainConfig,
    acfg: &AslConfig,
) -> Result<(ModelParams, f64)> {
    tcfg.validate()?;
    acfg.validate()?;
    if shard.is_empty() {
        return Err(Error::config("cannot train on an empty shard"));
    }
    let shape = params.shape;
    if shard.n_features() != shape.n_features || shard.n_labels() != shape.n_labels {
        return Err(Error::dim(format!(
            "shard has D={},L={} but model has D={},L={}",
            shard.n_features(),
            shard.n_labels(),
            shape.n_features,
            shape.n_labels
        )));
    }

    let features = shard.features();
    let targets = shard.labels().to_f64();
    let mut current = params.clone();
    let mut opt = AdamW::new(current.values.len(), tcfg.learning_rate, tcfg.weight_decay);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut epoch_loss = 0.0;

    for epoch in 0..tcfg.local_epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(tcfg.seed, &[epoch as u64]));
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(tcfg.batch_size).enumerate() {
            let x = features.select(Axis(0), idx);
            let t = targets.select(Axis(0), idx);
            let (loss, grad) = loss_and_grad(&current, x.view(), t.view(), acfg)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch });
            }
            opt.step(&mut current.values, &grad);
            loss_sum += loss * idx.len() as f64;
        }
        epoch_loss = loss_sum / shard.len() as f64;
    }
    Ok((current, epoch_loss))
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    n_features: usize,
    n_labels: usize,
    hidden: Option<usize>,
    len: usize,
}

/// JSON shape header line, then the values as little-endian f64.
pub fn write_params<W: Write>(params: &ModelParams, mut w: W) -> std::io::Result<()> {
    let header = ParamsHeader {
        n_features: params.shape.n_features,
        n_labels: params.shape.n_labels,
        hidden: params.shape.hidden,
        len: params.values.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_params<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<params stream>", e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing params header".into(),
        })?;
    let header: ParamsHeader = serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let body = &bytes[newline + 1..];
    if body.len() != header.len * 8 {
        return Err(Error::Integrity(format!(
            "header declares {} values but body has {} bytes",
            header.len,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let shape = ModelShape {
        n_features: header.n_features,
        n_labels: header.n_labels,
        hidden: header.hidden,
    };
    ModelParams::new(shape, values)
}

/// Predict probabilities for a whole dataset.
pub fn predict(params: &ModelParams, ds: &MultiLabelDataset) -> Result<Array2<f64>> {
    forward(params, ds.features().view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_shapes_and_determinism() {
        let shape = ModelShape::linear(8, 3);
        let a = init_params(shape, 5).unwrap();
        assert_eq!(a.values().len(), 27);
        assert_eq!(a, init_params(shape, 5).unwrap());
        assert_ne!(a, init_params(shape, 6).unwrap());
        assert!(a.bias_indices().iter().all(|&i| a.values()[i] == 0.0));
        let h = init_params(ModelShape::with_hidden(4, 3, 5), 1).unwrap();
        assert_eq!(h.values().len(), 4 * 5 + 5 + 5 * 3 + 3);
        assert!(h.bias_indices().iter().all(|&i| h.values()[i] == 0.0));
        assert!(matches!(init_params(ModelShape::linear(0, 3), 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_outputs_half() {
        let p = ModelParams::zeros(ModelShape::linear(3, 2)).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        let probs = forward(&p, x.view()).unwrap();
        assert_eq!(probs.dim(), (2, 2));
        assert!(probs.iter().all(|&v| v == 0.5));
        assert!(matches!(forward(&p, array![[1.0]].view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn positive_weight_is_monotone() {
        let mut values = vec![0.0; 2 * 1 + 1];
        values[0] = 0.7; // W[feature 0, label 0]
        let p = ModelParams::new(ModelShape::linear(2, 1), values).unwrap();
        let lo = forward(&p, array![[0.1, 0.0]].view()).unwrap()[[0, 0]];
        let hi = forward(&p, array![[0.9, 0.0]].view()).unwrap()[[0, 0]];
        assert!(hi > lo);
    }

    #[test]
    fn saturated_logits_stay_inside_unit_interval() {
        let mut values = vec![0.0; 2];
        values[0] = 1e3;
        let p = ModelParams::new(ModelShape::linear(1, 1), values).unwrap();
        let probs = forward(&p, array![[1.0], [-1.0]].view()).unwrap();
        assert!(probs.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn asl_reduces_to_bce() {
        let probs = array![[0.2, 0.9], [0.6, 0.01]];
        let targets = array![[1.0, 0.0], [0.0, 1.0]];
        let (loss, _) = asl_loss(probs.view(), targets.view(), &AslConfig::bce()).unwrap();
        let bce = -((0.2f64).ln() + (0.1f64).ln() + (0.4f64).ln() + (0.01f64).ln()) / 4.0;
        assert!((loss - bce).abs() < 1e-12);
    }

    #[test]
    fn margin_region_is_flat() {
        let cfg = AslConfig {
            margin: 0.05,
            ..AslConfig::default()
        };
        let (loss, grad) = asl_loss(array![[0.03]].view(), array![[0.0]].view(), &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad[[0, 0]], 0.0);
    }

    #[test]
    fn asl_rejects_bad_inputs() {
        let cfg = AslConfig::default();
        assert!(matches!(asl_loss(array![[1.0]].view(), array![[1.0]].view(), &cfg), Err(Error::Domain(_))));
        assert!(matches!(asl_loss(array![[0.5]].view(), array![[0.5]].view(), &cfg), Err(Error::Domain(_))));
        assert!(matches!(
            asl_loss(array![[0.5, 0.5]].view(), array![[1.0]].view(), &cfg),
            Err(Error::Dimension(_))
        ));
        let bad = AslConfig {
            gamma_pos: 2.0,
            gamma_neg: 1.0,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    fn tiny_dataset() -> MultiLabelDataset {
        use crate::data::LabelMatrix;
        let features = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.2, -0.3]];
        let labels = LabelMatrix::from_rows(&[[1u8, 0], [0, 1], [1, 1], [0, 1]]).unwrap();
        MultiLabelDataset::new(features, labels, MultiLabelDataset::default_label_names(2)).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let ds = tiny_dataset();
        let p = init_params(ModelShape::linear(2, 2), 3).unwrap();
        let tcfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let (out, loss) = train_local(&p, &ds, &tcfg, &AslConfig::default()).unwrap();
        assert_eq!(out, p);
        assert!(loss.is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset();
        let p = init_params(ModelShape::with_hidden(2, 2, 3), 3).unwrap();
        let tcfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 2,
            seed: 17,
            ..TrainConfig::default()
        };
        let a = train_local(&p, &ds, &tcfg, &AslConfig::default()).unwrap();
        let b = train_local(&p, &ds, &tcfg, &AslConfig::default()).unwrap();
        assert_eq!(a.0.values(), b.0.values());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn single_sample_loss_decreases_every_epoch() {
        use crate::data::LabelMatrix;
        let ds = MultiLabelDataset::new(
            array![[1.0, -0.5, 0.25]],
            LabelMatrix::from_rows(&[[1u8, 0, 1]]).unwrap(),
            MultiLabelDataset::default_label_names(3),
        )
        .unwrap();
        let mut params = init_params(ModelShape::linear(3, 3), 0).unwrap();
        let tcfg = TrainConfig {
            learning_rate: 1e-2,
            local_epochs: 1,
            ..TrainConfig::default()
        };
        let acfg = AslConfig::bce();
        let mut prev = f64::INFINITY;
        for _ in 0..30 {
            let (next, _) = train_local(&params, &ds, &tcfg, &acfg).unwrap();
            let probs = predict(&next, &ds).unwrap();
            let (loss, _) = asl_loss(probs.view(), ds.labels().to_f64().view(), &acfg).unwrap();
            assert!(loss < prev, "{loss} >= {prev}");
            prev = loss;
            params = next;
        }
    }

    #[test]
    fn params_round_trip_and_integrity() {
        let p = init_params(ModelShape::with_hidden(3, 2, 4), 9).unwrap();
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        assert_eq!(read_params(buf.as_slice()).unwrap(), p);
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(buf.as_slice()), Err(Error::Integrity(_))));
    }
}
