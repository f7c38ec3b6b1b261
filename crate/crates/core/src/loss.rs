//! Cosine distance, the soft nearest neighbor loss and the combined
//! cross-entropy + contrastive objective, with analytic gradients.
//!
//! For a batch of embeddings `v` with labels `y`, the soft nearest neighbor
//! loss of anchor `i` is
//!
//! ```text
//! l_i = -log( Σ_{j≠i, y_j=y_i} exp(-d(v_i,v_j)/T) / Σ_{k≠i} exp(-d(v_i,v_k)/T) )
//! ```
//!
//! and the batch loss is the mean of `l_i` over anchors that have at least
//! one same-label partner. Anchors without a partner would contribute
//! `-log 0`; they are left out of both the sum and the divisor. When every
//! anchor is eligible the divisor is `N`.
//!
//! The training objective is `mean_ce(y, ŷ) + α · l_sn(v, y, T)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Norms below this are treated as zero; the distance to a zero vector is 1.
pub const ZERO_NORM: f64 = 1e-12;

/// Probability rows must sum to one within this tolerance.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("{values} values cannot be split into rows of {width}")]
    RaggedBatch { values: usize, width: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("label {label} at row {row} is outside 0..{classes}")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("probability row {row} sums to {sum}")]
    NotAProbability { row: usize, sum: f64 },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("alpha must be non-negative, got {0}")]
    Alpha(f64),
    #[error("prediction and embedding batches disagree on the label at row {0}")]
    Misaligned(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizationConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub distance: Distance,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            alpha: 0.2,
            temperature: 2.0,
            distance: Distance::Cosine,
        }
    }
}

impl RegularizationConfig {
    /// Plain cross-entropy.
    pub fn disabled() -> Self {
        RegularizationConfig {
            alpha: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(LossError::Temperature(self.temperature));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(LossError::Alpha(self.alpha));
        }
        Ok(())
    }
}

/// `N × D` embedding matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(vectors: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self, LossError> {
        if dim == 0 {
            return Err(LossError::ZeroDimension);
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(LossError::RaggedBatch {
                values: vectors.len(),
                width: dim,
            });
        }
        let rows = vectors.len() / dim;
        if rows == 0 {
            return Err(LossError::EmptyBatch);
        }
        if labels.len() != rows {
            return Err(LossError::LabelCount {
                labels: labels.len(),
                rows,
            });
        }
        Ok(EmbeddingBatch { vectors, dim, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [f64] {
        &mut self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of anchors with at least one same-label partner.
    pub fn eligible_anchors(&self) -> usize {
        (0..self.len()).filter(|&i| self.has_partner(i)).count()
    }

    fn has_partner(&self, i: usize) -> bool {
        let y = self.labels[i];
        self.labels.iter().enumerate().any(|(j, &l)| j != i && l == y)
    }
}

/// Classifier outputs for a batch, as raw logits or probability rows.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionBatch {
    Logits {
        values: Vec<f64>,
        classes: usize,
        labels: Vec<usize>,
    },
    Probabilities {
        values: Vec<f64>,
        classes: usize,
        labels: Vec<usize>,
    },
}

impl PredictionBatch {
    pub fn logits(values: Vec<f64>, classes: usize, labels: Vec<usize>) -> Result<Self, LossError> {
        check_rows(&values, classes, &labels)?;
        Ok(PredictionBatch::Logits {
            values,
            classes,
            labels,
        })
    }

    pub fn probabilities(
        values: Vec<f64>,
        classes: usize,
        labels: Vec<usize>,
    ) -> Result<Self, LossError> {
        check_rows(&values, classes, &labels)?;
        for (row, chunk) in values.chunks(classes).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE || chunk.iter().any(|&p| p < 0.0) {
                return Err(LossError::NotAProbability { row, sum });
            }
        }
        Ok(PredictionBatch::Probabilities {
            values,
            classes,
            labels,
        })
    }

    pub fn labels(&self) -> &[usize] {
        match self {
            PredictionBatch::Logits { labels, .. } | PredictionBatch::Probabilities { labels, .. } => {
                labels
            }
        }
    }

    pub fn len(&self) -> usize {
        self.labels().len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels().is_empty()
    }
}

fn check_rows(values: &[f64], classes: usize, labels: &[usize]) -> Result<(), LossError> {
    if classes == 0 {
        return Err(LossError::ZeroDimension);
    }
    if !values.len().is_multiple_of(classes) {
        return Err(LossError::RaggedBatch {
            values: values.len(),
            width: classes,
        });
    }
    let rows = values.len() / classes;
    if rows == 0 {
        return Err(LossError::EmptyBatch);
    }
    if labels.len() != rows {
        return Err(LossError::LabelCount {
            labels: labels.len(),
            rows,
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(LossError::LabelOutOfRange { row, label, classes });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `1 − u·v / (‖u‖‖v‖)`, in `[0, 2]`. Returns 1 when either norm is below
/// [`ZERO_NORM`].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, LossError> {
    if u.len() != v.len() {
        return Err(LossError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.is_empty() {
        return Err(LossError::ZeroDimension);
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok(1.0);
    }
    Ok((1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0))
}

/// Unit vectors and norms of every row; zero rows keep a zero direction.
struct Normalized {
    units: Vec<f64>,
    norms: Vec<f64>,
    dim: usize,
}

impl Normalized {
    fn new(batch: &EmbeddingBatch) -> Self {
        let dim = batch.dim;
        let mut units = vec![0.0; batch.vectors.len()];
        let mut norms = vec![0.0; batch.len()];
        for i in 0..batch.len() {
            let row = batch.row(i);
            let n = norm(row);
            norms[i] = n;
            if n >= ZERO_NORM {
                for (u, x) in units[i * dim..(i + 1) * dim].iter_mut().zip(row) {
                    *u = x / n;
                }
            }
        }
        Normalized { units, norms, dim }
    }

    fn unit(&self, i: usize) -> &[f64] {
        &self.units[i * self.dim..(i + 1) * self.dim]
    }

    fn degenerate(&self, i: usize) -> bool {
        self.norms[i] < ZERO_NORM
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        if self.degenerate(i) || self.degenerate(j) {
            1.0
        } else {
            1.0 - dot(self.unit(i), self.unit(j))
        }
    }

    /// Adds `coeff · ∂d(v_i, v_j)/∂v_i` to `grad_i`.
    fn accumulate(&self, i: usize, j: usize, coeff: f64, grad_i: &mut [f64]) {
        if self.degenerate(i) || self.degenerate(j) {
            return;
        }
        let (ui, uj) = (self.unit(i), self.unit(j));
        let cos = dot(ui, uj);
        let scale = -coeff / self.norms[i];
        for ((g, a), b) in grad_i.iter_mut().zip(ui).zip(uj) {
            *g += scale * (b - cos * a);
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(values.map(|v| libm::exp(v - max)).sum::<f64>())
}

/// Soft nearest neighbor loss with cosine distance.
pub fn snn_loss(batch: &EmbeddingBatch, temperature: f64) -> Result<f64, LossError> {
    snn_eval(batch, temperature, false).map(|(v, _)| v)
}

/// Soft nearest neighbor loss and its gradient with respect to every
/// embedding coordinate (row-major, same layout as the batch).
pub fn snn_loss_and_grad(
    batch: &EmbeddingBatch,
    temperature: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    snn_eval(batch, temperature, true)
}

fn snn_eval(
    batch: &EmbeddingBatch,
    temperature: f64,
    with_grad: bool,
) -> Result<(f64, Vec<f64>), LossError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(LossError::Temperature(temperature));
    }
    let n = batch.len();
    let dim = batch.dim;
    let mut grad = if with_grad { vec![0.0; n * dim] } else { Vec::new() };
    if n == 1 {
        log::warn!("soft nearest neighbor loss on a single sample: no pairs, returning 0");
        return Ok((0.0, grad));
    }
    let eligible: Vec<bool> = (0..n).map(|i| batch.has_partner(i)).collect();
    let n_eff = eligible.iter().filter(|&&e| e).count();
    if n_eff == 0 {
        return Ok((0.0, grad));
    }

    let norm = Normalized::new(batch);
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = norm.distance(i, j);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let labels = &batch.labels;
    let mut total = 0.0;
    let mut coeffs = vec![0.0; n];
    for i in (0..n).filter(|&i| eligible[i]) {
        let logit = |k: usize| -dist[i * n + k] / temperature;
        let others = (0..n).filter(move |&k| k != i);
        let positives = others.clone().filter(|&k| labels[k] == labels[i]);
        let log_den = log_sum_exp(others.clone().map(logit));
        let log_num = log_sum_exp(positives.map(logit));
        total += log_den - log_num;

        if with_grad {
            // ∂l_i/∂d_ik = (p⁺_ik − q_ik) / T, with p⁺ the softmax over the
            // positives and q the softmax over all other samples.
            for k in others {
                let s = logit(k);
                let q = libm::exp(s - log_den);
                let p = if labels[k] == labels[i] {
                    libm::exp(s - log_num)
                } else {
                    0.0
                };
                coeffs[k] = (p - q) / (temperature * n_eff as f64);
            }
            for k in (0..n).filter(|&k| k != i) {
                let c = coeffs[k];
                let (lo, hi) = grad.split_at_mut(i.max(k) * dim);
                let (gi, gk) = if i < k {
                    (&mut lo[i * dim..(i + 1) * dim], &mut hi[..dim])
                } else {
                    (&mut hi[..dim], &mut lo[k * dim..(k + 1) * dim])
                };
                norm.accumulate(i, k, c, gi);
                norm.accumulate(k, i, c, gk);
            }
        }
    }
    Ok((total / n_eff as f64, grad))
}

/// Mean cross-entropy of the batch.
pub fn cross_entropy(pred: &PredictionBatch) -> f64 {
    cross_entropy_and_grad(pred).0
}

/// Mean cross-entropy and its gradient with respect to the prediction
/// values (logits or probabilities, whichever the batch holds).
pub fn cross_entropy_and_grad(pred: &PredictionBatch) -> (f64, Vec<f64>) {
    match pred {
        PredictionBatch::Logits {
            values,
            classes,
            labels,
        } => {
            let n = labels.len() as f64;
            let mut grad = vec![0.0; values.len()];
            let mut total = 0.0;
            for ((row, g), &y) in values.chunks(*classes).zip(grad.chunks_mut(*classes)).zip(labels) {
                let lse = log_sum_exp(row.iter().copied());
                total += lse - row[y];
                for (c, (gc, &z)) in g.iter_mut().zip(row).enumerate() {
                    let p = libm::exp(z - lse);
                    *gc = (p - if c == y { 1.0 } else { 0.0 }) / n;
                }
            }
            (total / n, grad)
        }
        PredictionBatch::Probabilities {
            values,
            classes,
            labels,
        } => {
            let n = labels.len() as f64;
            let mut grad = vec![0.0; values.len()];
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                let p = values[r * classes + y];
                total -= libm::log(p);
                grad[r * classes + y] = -1.0 / (p * n);
            }
            (total / n, grad)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    pub cross_entropy: f64,
    pub snn: f64,
    /// Gradient with respect to the prediction values.
    pub d_predictions: Vec<f64>,
    /// Gradient with respect to the embeddings.
    pub d_embeddings: Vec<f64>,
}

fn check_aligned(pred: &PredictionBatch, emb: &EmbeddingBatch) -> Result<(), LossError> {
    if pred.len() != emb.len() {
        return Err(LossError::LabelCount {
            labels: pred.len(),
            rows: emb.len(),
        });
    }
    match pred.labels().iter().zip(emb.labels()).position(|(a, b)| a != b) {
        Some(row) => Err(LossError::Misaligned(row)),
        None => Ok(()),
    }
}

/// `mean_ce + α · snn`. With `α = 0` the regularizer is not evaluated and
/// the result is exactly the mean cross-entropy.
pub fn combined_loss(
    pred: &PredictionBatch,
    emb: &EmbeddingBatch,
    cfg: &RegularizationConfig,
) -> Result<f64, LossError> {
    cfg.validate()?;
    check_aligned(pred, emb)?;
    let ce = cross_entropy(pred);
    if cfg.alpha == 0.0 {
        return Ok(ce);
    }
    Ok(ce + cfg.alpha * snn_loss(emb, cfg.temperature)?)
}

pub fn combined_loss_and_grad(
    pred: &PredictionBatch,
    emb: &EmbeddingBatch,
    cfg: &RegularizationConfig,
) -> Result<CombinedLoss, LossError> {
    cfg.validate()?;
    check_aligned(pred, emb)?;
    let (ce, d_predictions) = cross_entropy_and_grad(pred);
    if cfg.alpha == 0.0 {
        return Ok(CombinedLoss {
            value: ce,
            cross_entropy: ce,
            snn: 0.0,
            d_predictions,
            d_embeddings: vec![0.0; emb.vectors.len()],
        });
    }
    let (snn, mut d_embeddings) = snn_loss_and_grad(emb, cfg.temperature)?;
    for g in &mut d_embeddings {
        *g *= cfg.alpha;
    }
    Ok(CombinedLoss {
        value: ce + cfg.alpha * snn,
        cross_entropy: ce,
        snn,
        d_predictions,
        d_embeddings,
    })
}

/// A scalar function of an embedding batch with an analytic gradient.
pub trait EmbeddingObjective {
    fn value(&self, batch: &EmbeddingBatch) -> f64;
    fn gradient(&self, batch: &EmbeddingBatch) -> Vec<f64>;
}

/// The soft nearest neighbor loss at a fixed temperature.
#[derive(Debug, Clone, Copy)]
pub struct SnnObjective {
    pub temperature: f64,
}

impl EmbeddingObjective for SnnObjective {
    fn value(&self, batch: &EmbeddingBatch) -> f64 {
        snn_loss(batch, self.temperature).expect("valid temperature")
    }

    fn gradient(&self, batch: &EmbeddingBatch) -> Vec<f64> {
        snn_loss_and_grad(batch, self.temperature)
            .expect("valid temperature")
            .1
    }
}

/// Combined loss where the logits come from a linear head on the
/// embeddings, `z = W v + b`, so both terms depend on `v`.
#[derive(Debug, Clone)]
pub struct CombinedObjective {
    /// `classes × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub config: RegularizationConfig,
}

impl CombinedObjective {
    fn classes(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, batch: &EmbeddingBatch) -> PredictionBatch {
        let c = self.classes();
        let mut values = Vec::with_capacity(batch.len() * c);
        for i in 0..batch.len() {
            let v = batch.row(i);
            for k in 0..c {
                values.push(dot(&self.weights[k * batch.dim..(k + 1) * batch.dim], v) + self.bias[k]);
            }
        }
        PredictionBatch::logits(values, c, batch.labels.clone()).expect("labels within head classes")
    }
}

impl EmbeddingObjective for CombinedObjective {
    fn value(&self, batch: &EmbeddingBatch) -> f64 {
        combined_loss(&self.logits(batch), batch, &self.config).expect("valid objective")
    }

    fn gradient(&self, batch: &EmbeddingBatch) -> Vec<f64> {
        let out = combined_loss_and_grad(&self.logits(batch), batch, &self.config)
            .expect("valid objective");
        let (c, d) = (self.classes(), batch.dim);
        let mut grad = out.d_embeddings;
        for i in 0..batch.len() {
            for k in 0..c {
                let dz = out.d_predictions[i * c + k];
                for (g, w) in grad[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&self.weights[k * d..(k + 1) * d])
                {
                    *g += dz * w;
                }
            }
        }
        grad
    }
}

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`
/// so coordinates with a vanishing gradient are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Maximum relative error between the analytic gradient and central finite
/// differences with step `epsilon`, over every embedding coordinate.
pub fn grad_check(objective: &dyn EmbeddingObjective, batch: &EmbeddingBatch, epsilon: f64) -> f64 {
    let analytic = objective.gradient(batch);
    let mut probe = batch.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..batch.vectors.len() {
        let x = batch.vectors[idx];
        probe.vectors[idx] = x + epsilon;
        let plus = objective.value(&probe);
        probe.vectors[idx] = x - epsilon;
        let minus = objective.value(&probe);
        probe.vectors[idx] = x;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let scale = analytic[idx].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((analytic[idx] - numeric).abs() / scale);
    }
    worst
}
