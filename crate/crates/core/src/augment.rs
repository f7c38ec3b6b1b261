//! Training-time augmentation and channel normalization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pixels::Image;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Standard deviation of additive noise on `[0, 1]` pixel values,
    /// applied before normalization. 0 disables it.
    pub gaussian_noise_std: f32,
    pub normalize_mean: [f32; 3],
    pub normalize_std: [f32; 3],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            horizontal_flip: true,
            vertical_flip: true,
            gaussian_noise_std: 0.01,
            normalize_mean: IMAGENET_MEAN,
            normalize_std: IMAGENET_STD,
        }
    }
}

pub fn flip_horizontal(img: &mut Image) {
    let w = img.width;
    for row in img.data.chunks_mut(w) {
        row.reverse();
    }
}

pub fn flip_vertical(img: &mut Image) {
    let (h, w) = (img.height, img.width);
    for c in 0..img.channels {
        let plane = img.plane_mut(c);
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

/// `(x − μ) / σ` per channel.
pub fn normalize(img: &mut Image, cfg: &AugmentationConfig) {
    for c in 0..img.channels.min(3) {
        let (m, s) = (cfg.normalize_mean[c], cfg.normalize_std[c]);
        for v in img.plane_mut(c) {
            *v = (*v - m) / s;
        }
    }
}

/// Random flips (each with probability ½) and Gaussian noise, then
/// normalization.
pub fn augment<R: Rng>(img: &mut Image, cfg: &AugmentationConfig, rng: &mut R) {
    if cfg.horizontal_flip && rng.random_bool(0.5) {
        flip_horizontal(img);
    }
    if cfg.vertical_flip && rng.random_bool(0.5) {
        flip_vertical(img);
    }
    if cfg.gaussian_noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.gaussian_noise_std).expect("finite std");
        for v in &mut img.data {
            *v += noise.sample(rng);
        }
    }
    normalize(img, cfg);
}
