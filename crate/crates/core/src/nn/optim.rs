use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Backbone, Param};

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }
}

impl Adam {
    /// One update of every trainable parameter of `net`. The visiting order
    /// of a backbone is fixed, so moment slots line up across steps.
    pub fn step(&mut self, net: &mut dyn Backbone, lr: f32) {
        self.step += 1;
        let bc1 = 1.0 - libm::powf(self.beta1, self.step as f32);
        let bc2 = 1.0 - libm::powf(self.beta2, self.step as f32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        let mut slot = 0;
        net.visit_trainable(&mut |p: &mut Param| {
            if moments.len() == slot {
                moments.push((vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            }
            let (m, v) = &mut moments[slot];
            for (((w, g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / bc1) / (libm::sqrtf(*v / bc2) + eps);
            }
            slot += 1;
        });
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Cosine decay from the base rate to 0 over the run, stepped per epoch.
    #[default]
    CosineAnnealing,
    Constant,
}

impl Scheduler {
    pub fn learning_rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Scheduler::Constant => base,
            Scheduler::CosineAnnealing if epochs == 0 => base,
            Scheduler::CosineAnnealing => {
                0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * epoch as f64 / epochs as f64))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let s = Scheduler::CosineAnnealing;
        assert_eq!(s.learning_rate(1e-3, 0, 10), 1e-3);
        assert!((s.learning_rate(1e-3, 5, 10) - 5e-4).abs() < 1e-15);
        assert!(s.learning_rate(1e-3, 10, 10).abs() < 1e-15);
        assert_eq!(Scheduler::Constant.learning_rate(0.1, 7, 10), 0.1);
    }
}
