//! Self-check of the regularizer against a direct double-loop evaluation
//! and finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use shiftforge_core::loss::{
    grad_check, snn_loss, CombinedObjective, EmbeddingBatch, RegularizationConfig, SnnObjective,
};

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

/// The loss written out term by term: cosine distances from raw dot
/// products, plain `exp` and `ln`, mean over anchors with a same-class
/// partner.
pub fn reference_snn(vectors: &[f64], dim: usize, labels: &[usize], temperature: f64) -> f64 {
    let n = labels.len();
    let row = |i: usize| &vectors[i * dim..(i + 1) * dim];
    let distance = |i: usize, j: usize| {
        let (a, b) = (row(i), row(j));
        let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na < 1e-12 || nb < 1e-12 {
            1.0
        } else {
            (1.0 - ab / (na * nb)).clamp(0.0, 2.0)
        }
    };
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut partners = 0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let e = (-distance(i, j) / temperature).exp();
            den += e;
            if labels[j] == labels[i] {
                num += e;
                partners += 1;
            }
        }
        if partners > 0 {
            total += -(num / den).ln();
            anchors += 1;
        }
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

/// A random batch: 2–32 rows, 1–16 dimensions, 2–4 classes, occasionally
/// with an all-zero row.
pub fn random_batch(rng: &mut ChaCha8Rng) -> EmbeddingBatch {
    let n = rng.random_range(2..=32);
    let dim = rng.random_range(1..=16);
    let classes = rng.random_range(2..=4);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut vectors: Vec<f64> = (0..n * dim).map(|_| normal.sample(rng)).collect();
    if rng.random_bool(0.1) {
        let z = rng.random_range(0..n);
        vectors[z * dim..(z + 1) * dim].fill(0.0);
    }
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    EmbeddingBatch::new(vectors, dim, labels).expect("consistent batch")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheckReport {
    pub oracle_batches: usize,
    pub max_oracle_error: f64,
    pub gradient_batches: usize,
    pub max_snn_gradient_error: f64,
    pub max_combined_gradient_error: f64,
    pub passed: bool,
}

/// Every row is well away from the zero-norm cut-off.
fn smooth(batch: &EmbeddingBatch) -> bool {
    (0..batch.len()).all(|i| batch.row(i).iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-3)
}

pub fn run(oracle_batches: usize, gradient_batches: usize, seed: u64) -> LossCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_oracle_error: f64 = 0.0;
    for _ in 0..oracle_batches {
        let batch = random_batch(&mut rng);
        let t = rng.random_range(0.1..10.0);
        let fast = snn_loss(&batch, t).expect("positive temperature");
        let slow = reference_snn(batch.vectors(), batch.dim(), batch.labels(), t);
        max_oracle_error = max_oracle_error.max((fast - slow).abs());
    }

    let mut max_snn: f64 = 0.0;
    let mut max_combined: f64 = 0.0;
    let normal = Normal::new(0.0, 0.5).expect("finite std");
    let mut done = 0;
    while done < gradient_batches {
        let batch = random_batch(&mut rng);
        if !smooth(&batch) {
            continue;
        }
        let t = rng.random_range(0.5..5.0);
        max_snn = max_snn.max(grad_check(&SnnObjective { temperature: t }, &batch, FD_STEP));
        let classes = batch.labels().iter().max().expect("non-empty") + 1;
        let combined = CombinedObjective {
            weights: (0..classes * batch.dim()).map(|_| normal.sample(&mut rng)).collect(),
            bias: (0..classes).map(|_| normal.sample(&mut rng)).collect(),
            config: RegularizationConfig {
                alpha: 0.2,
                temperature: t,
                ..Default::default()
            },
        };
        max_combined = max_combined.max(grad_check(&combined, &batch, FD_STEP));
        done += 1;
    }
    LossCheckReport {
        oracle_batches,
        max_oracle_error,
        gradient_batches,
        max_snn_gradient_error: max_snn,
        max_combined_gradient_error: max_combined,
        passed: max_oracle_error < ORACLE_TOLERANCE
            && max_snn < GRADIENT_TOLERANCE
            && max_combined < GRADIENT_TOLERANCE,
    }
}
