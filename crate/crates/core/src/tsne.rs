//! Exact t-SNE for 2-D embedding projections.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            seed: 0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub sample_ids: Vec<String>,
    /// One `[x, y]` row per input embedding, in input order.
    pub coordinates: Vec<[f64; 2]>,
    pub perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
    /// KL divergence between the input and output affinities at the end.
    pub kl_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TsneError {
    #[error("need at least 4 embeddings, got {0}")]
    TooFew(usize),
    #[error("perplexity {perplexity} must be positive and below the number of embeddings ({n})")]
    Perplexity { perplexity: f64, n: usize },
    #[error("embedding row {0} has a non-finite component")]
    NonFinite(usize),
    #[error("{values} values do not form rows of dimension {dim} for {ids} ids")]
    Shape { values: usize, dim: usize, ids: usize },
}

const MIN_PROBABILITY: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;

/// Conditional affinities `p_{j|i}` whose entropy matches `ln perplexity`,
/// found by bisection on the Gaussian precision per row.
fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = libm::log(perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        for _ in 0..200 {
            let min = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let e = libm::exp(-beta * (row[j] - min));
                p[i * n + j] = e;
                sum += e;
                weighted += e * (row[j] - min);
            }
            // H = ln Σ + β · E[d − min]
            let entropy = libm::log(sum) + beta * weighted / sum;
            for j in 0..n {
                p[i * n + j] /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    p
}

/// Projects `N × dim` embeddings (row-major) to two dimensions.
pub fn project_embeddings(
    sample_ids: Vec<String>,
    embeddings: &[f64],
    dim: usize,
    cfg: &TsneConfig,
) -> Result<ProjectionResult, TsneError> {
    let n = sample_ids.len();
    if dim == 0 || embeddings.len() != n * dim {
        return Err(TsneError::Shape {
            values: embeddings.len(),
            dim,
            ids: n,
        });
    }
    if n < 4 {
        return Err(TsneError::TooFew(n));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity < n as f64) {
        return Err(TsneError::Perplexity {
            perplexity: cfg.perplexity,
            n,
        });
    }
    if let Some(row) = (0..n).find(|&i| embeddings[i * dim..(i + 1) * dim].iter().any(|v| !v.is_finite())) {
        return Err(TsneError::NonFinite(row));
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..dim)
                .map(|k| {
                    let t = embeddings[i * dim + k] - embeddings[j * dim + k];
                    t * t
                })
                .sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let cond = conditional_affinities(&dist, n, cfg.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(MIN_PROBABILITY);
            }
        }
    }

    let mut rng = stream(cfg.seed, 0);
    let init = Normal::new(0.0, 1e-4).expect("finite std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.exaggeration_iterations { 0.5 } else { 0.8 };

        let mut sum_num = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                sum_num += 2.0 * q;
            }
        }
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / sum_num).max(MIN_PROBABILITY);
                let m = 4.0 * (exaggeration * p[i * n + j] - q) * num[i * n + j];
                grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8f64).max(MIN_GAIN)
            };
            velocity[k] = momentum * velocity[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[2 * i + axis] -= mean;
            }
        }
    }

    let mut sum_num = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                sum_num += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[i * n + j] / sum_num).max(MIN_PROBABILITY);
                kl += p[i * n + j] * libm::log(p[i * n + j] / q);
            }
        }
    }

    Ok(ProjectionResult {
        sample_ids,
        coordinates: y.chunks(2).map(|c| [c[0], c[1]]).collect(),
        perplexity: cfg.perplexity,
        seed: cfg.seed,
        iterations: cfg.iterations,
        kl_divergence: kl,
    })
}
