//! Synthetic group-shift benchmark: two classes over a handful of groups,
//! each group with its own nuisance texture and color, nOK samples carrying
//! a shared defect motif, and class ratios that differ between groups so
//! group appearance correlates with the label.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pixels::Image;
use crate::record::{Category, Label, Manifest, SampleRecord, Side, Transmission};
use crate::rng::stream;
use crate::train::ImageSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub samples: usize,
    /// Number of groups, at most 4; group `g` becomes the `g`-th held-out
    /// category.
    pub groups: usize,
    pub parts_per_group: usize,
    pub image_size: usize,
    pub nok_fraction: f64,
    /// Group/class correlation: even groups get `nok_fraction + skew` nOK
    /// samples, odd groups `nok_fraction − skew`.
    pub label_skew: f64,
    /// Half-range of the per-group color offset.
    pub tint_strength: f32,
    pub texture_strength: f32,
    pub motif_strength: f32,
    pub noise_std: f32,
    /// Adds an extra gear-wheel group on top of `samples`, sized like one
    /// regular group.
    pub include_gear: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples: 2000,
            groups: 4,
            parts_per_group: 5,
            image_size: 12,
            nok_fraction: 0.5,
            label_skew: 0.0,
            tint_strength: 0.03,
            texture_strength: 0.2,
            motif_strength: 0.3,
            noise_std: 0.08,
            include_gear: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("groups must be between 1 and 4, got {0}")]
    Groups(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(1..=4).contains(&self.groups) {
            return Err(SynthError::Groups(self.groups));
        }
        if self.parts_per_group == 0 || self.image_size < 4 || self.samples < self.groups {
            return Err(SynthError::Parameter(String::from(
                "need parts_per_group >= 1, image_size >= 4 and at least one sample per group",
            )));
        }
        let (lo, hi) = (self.nok_fraction - self.label_skew, self.nok_fraction + self.label_skew);
        if !(self.label_skew >= 0.0 && lo >= 0.0 && hi <= 1.0) {
            return Err(SynthError::Parameter(format!(
                "nok_fraction ± label_skew must stay in [0, 1], got [{lo}, {hi}]"
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(SynthError::Parameter(String::from("noise_std must be non-negative")));
        }
        Ok(())
    }
}

/// Appearance shared by all samples of one group.
#[derive(Debug, Clone, Copy)]
struct GroupStyle {
    tint: [f32; 3],
    frequency: f32,
    angle: f32,
}

impl GroupStyle {
    fn new(rng: &mut ChaCha8Rng, tint_strength: f32) -> Self {
        let mut tint = [0.0; 3];
        for t in &mut tint {
            *t = tint_strength * rng.random_range(-1.0..1.0);
        }
        GroupStyle {
            tint,
            frequency: rng.random_range(0.5..1.6),
            angle: rng.random_range(0.0..core::f32::consts::PI),
        }
    }
}

fn render(
    cfg: &SynthConfig,
    style: &GroupStyle,
    label: Label,
    rng: &mut ChaCha8Rng,
) -> Image {
    let s = cfg.image_size;
    let mut data = alloc::vec![0.5f32; 3 * s * s];
    let phase = rng.random_range(0.0..core::f32::consts::TAU);
    let (sin, cos) = (libm::sinf(style.angle), libm::cosf(style.angle));
    for c in 0..3 {
        let offset = style.tint[c];
        for y in 0..s {
            for x in 0..s {
                let t = (x as f32 * cos + y as f32 * sin) * style.frequency + phase;
                data[(c * s + y) * s + x] += offset + cfg.texture_strength * libm::sinf(t);
            }
        }
    }
    if label == Label::Nok {
        // A dark plus-shaped scratch at a random position.
        let cy = rng.random_range(1..s - 1);
        let cx = rng.random_range(1..s - 1);
        for (dy, dx) in [(0i32, 0i32), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (y, x) = ((cy as i32 + dy) as usize, (cx as i32 + dx) as usize);
            for c in 0..3 {
                data[(c * s + y) * s + x] -= cfg.motif_strength;
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
        for v in &mut data {
            *v += noise.sample(rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::new(3, s, s, data).expect("sized buffer")
}

/// A generated manifest with its images held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub images: BTreeMap<String, Image>,
}

impl SyntheticDataset {
    pub fn generate(cfg: &SynthConfig) -> Self {
        Self::try_generate(cfg).expect("valid synthetic config")
    }

    pub fn try_generate(cfg: &SynthConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let mut groups: Vec<(Category, usize)> = (0..cfg.groups)
            .map(|g| {
                let base = cfg.samples / cfg.groups;
                let extra = usize::from(g < cfg.samples % cfg.groups);
                (Category::HELD_OUT[g], base + extra)
            })
            .collect();
        if cfg.include_gear {
            groups.push((Category::GearWheel, cfg.samples / cfg.groups));
        }

        let mut records = Vec::with_capacity(cfg.samples);
        let mut images = BTreeMap::new();
        for (g, &(category, count)) in groups.iter().enumerate() {
            let style = GroupStyle::new(&mut stream(cfg.seed, 1000 + g as u64), cfg.tint_strength);
            let mut rng = stream(cfg.seed, g as u64);
            let fraction = if g % 2 == 0 {
                cfg.nok_fraction + cfg.label_skew
            } else {
                cfg.nok_fraction - cfg.label_skew
            };
            let nok_count = libm::round(count as f64 * fraction) as usize;
            for i in 0..count {
                let label = if i < nok_count { Label::Nok } else { Label::Ok };
                let part = i % cfg.parts_per_group;
                let sample_id = format!("g{g}-{i:05}");
                let image = render(cfg, &style, label, &mut rng);
                records.push(SampleRecord {
                    image_path: format!("images/{sample_id}.png"),
                    label,
                    part_id: format!("g{g}-part{part}"),
                    functional_part_id: format!("g{g}-fp{part}"),
                    category,
                    transmission: if part.is_multiple_of(2) {
                        Transmission::Manual
                    } else {
                        Transmission::Automatic
                    },
                    side: if (i / cfg.parts_per_group).is_multiple_of(2) { Side::A } else { Side::B },
                    patch_origin: None,
                    sample_id: sample_id.clone(),
                });
                images.insert(sample_id, image);
            }
        }
        let manifest = Manifest::new(records).expect("generated ids are unique");
        Ok(SyntheticDataset { manifest, images })
    }
}

impl ImageSource for SyntheticDataset {
    fn load(&self, record: &SampleRecord) -> Result<Image, String> {
        self.images
            .get(&record.sample_id)
            .cloned()
            .ok_or_else(|| format!("no synthetic image for `{}`", record.sample_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::{build_split, verify_split, SplitKind, SplitStrategy};

    #[test]
    fn layout_and_balance() {
        let data = SyntheticDataset::generate(&SynthConfig {
            samples: 402,
            label_skew: 0.3,
            ..Default::default()
        });
        assert_eq!(data.manifest.records.len(), 402);
        assert_eq!(data.images.len(), 402);
        for cat in Category::HELD_OUT {
            let n = data.manifest.records.iter().filter(|r| r.category == cat).count();
            assert!(n == 100 || n == 101);
        }
        let nok = data.manifest.records.iter().filter(|r| r.label == Label::Nok).count();
        assert!((200..=202).contains(&nok));
        let img = &data.images["g0-00000"];
        assert_eq!((img.channels, img.height, img.width), (3, 12, 12));
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            samples: 40,
            ..Default::default()
        };
        assert_eq!(SyntheticDataset::generate(&cfg), SyntheticDataset::generate(&cfg));
        let other = SyntheticDataset::generate(&SynthConfig { seed: 1, ..cfg });
        assert_ne!(other.images["g0-00000"], SyntheticDataset::generate(&SynthConfig {
            samples: 40,
            ..Default::default()
        })
        .images["g0-00000"]);
    }

    #[test]
    fn every_split_regime_accepts_it() {
        let data = SyntheticDataset::generate(&SynthConfig {
            samples: 200,
            include_gear: true,
            ..Default::default()
        });
        for kind in [
            SplitKind::RandomS1,
            SplitKind::AcquisitionS2,
            SplitKind::FunctionalPartS3,
            SplitKind::CategoryS4,
        ] {
            let plan = build_split(&data.manifest, SplitStrategy::with_default_folds(kind, 0)).unwrap();
            assert!(verify_split(&data.manifest, &plan).is_empty(), "{kind:?}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(
            SyntheticDataset::try_generate(&SynthConfig {
                groups: 5,
                ..Default::default()
            }),
            Err(SynthError::Groups(5))
        );
        assert!(SyntheticDataset::try_generate(&SynthConfig {
            label_skew: 0.6,
            ..Default::default()
        })
        .is_err());
    }
}
