//! Binary classification metrics with nOK as the positive class, and
//! cross-fold aggregation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    /// Tallies `(predicted_positive, actually_positive)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (pred, truth) in pairs {
            c.add(pred, truth);
        }
        c
    }

    pub fn add(&mut self, predicted_positive: bool, actually_positive: bool) {
        match (predicted_positive, actually_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with the other class treated as positive.
    pub fn swapped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }

    pub fn metrics(&self) -> BinaryMetrics {
        BinaryMetrics::from_confusion(*self)
    }
}

/// Which ratios hit a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean of precision and recall.
    pub f1: f64,
    /// Arithmetic mean of precision and recall.
    pub f1_arithmetic: f64,
    /// Mean of the F1 scores with each class taken as positive.
    pub macro_f1: f64,
    pub accuracy: f64,
    pub undefined: UndefinedFlags,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> (f64, bool) {
    if p + r == 0.0 {
        (0.0, true)
    } else {
        (2.0 * p * r / (p + r), false)
    }
}

impl BinaryMetrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let (precision, p_undef) = ratio(c.tp, c.tp + c.fp);
        let (recall, r_undef) = ratio(c.tp, c.tp + c.fn_);
        let (f1, f1_undef) = harmonic(precision, recall);
        let s = c.swapped();
        let (neg_f1, _) = harmonic(ratio(s.tp, s.tp + s.fp).0, ratio(s.tp, s.tp + s.fn_).0);
        let (accuracy, _) = ratio(c.tp + c.tn, c.total());
        BinaryMetrics {
            confusion: c,
            precision,
            recall,
            f1,
            f1_arithmetic: (precision + recall) / 2.0,
            macro_f1: (f1 + neg_f1) / 2.0,
            accuracy,
            undefined: UndefinedFlags {
                precision: p_undef,
                recall: r_undef,
                f1: f1_undef,
            },
        }
    }
}

/// Mean and sample standard deviation (`N − 1` denominator). A single value
/// has standard deviation 0; an empty slice gives `(0, 0)`.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var))
}

/// Element-wise `b − a`.
pub fn deltas(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| y - x).collect()
}
