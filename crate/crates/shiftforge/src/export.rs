//! Explanation exports: activation maps as grayscale PNGs with JSON
//! sidecars, and 2-D projections as CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use shiftforge_core::gradcam::ActivationMap;
use shiftforge_core::record::Label;
use shiftforge_core::tsne::ProjectionResult;

use crate::fsio::{write_atomic, write_json};
use crate::images::encode_png_gray;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSidecar {
    pub sample_id: String,
    pub image_file: String,
    pub target_layer: String,
    pub target_class: usize,
    /// Pixel value 255 corresponds to this raw activation.
    pub global_scale: f64,
    pub height: usize,
    pub width: usize,
    pub raw_height: usize,
    pub raw_width: usize,
    pub raw_map: Vec<f64>,
}

/// A file-name-safe form of a sample id.
pub fn file_stem(sample_id: &str) -> String {
    sample_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// 8-bit rendering of the scaled map, values clamped to `[0, 1]`.
pub fn activation_pixels(map: &ActivationMap) -> Vec<u8> {
    map.upsampled_map
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes `<stem>.png` and `<stem>.json` into `dir`; returns the PNG path.
pub fn write_activation(dir: &Path, map: &ActivationMap) -> anyhow::Result<PathBuf> {
    let stem = file_stem(&map.sample_id);
    let png = dir.join(format!("{stem}.png"));
    let bytes = encode_png_gray(map.width as u32, map.height as u32, activation_pixels(map));
    write_atomic(&png, &bytes).with_context(|| format!("cannot write {}", png.display()))?;
    write_json(
        &dir.join(format!("{stem}.json")),
        &ActivationSidecar {
            sample_id: map.sample_id.clone(),
            image_file: format!("{stem}.png"),
            target_layer: map.target_layer.clone(),
            target_class: map.target_class,
            global_scale: map.global_scale,
            height: map.height,
            width: map.width,
            raw_height: map.raw_height,
            raw_width: map.raw_width,
            raw_map: map.raw_map.clone(),
        },
    )?;
    Ok(png)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub points: usize,
    pub perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
    pub kl_divergence: f64,
}

/// `sample_id,x,y` rows, plus a `label` column when labels are given.
pub fn projection_csv(result: &ProjectionResult, labels: Option<&BTreeMap<String, Label>>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match labels {
        Some(_) => w.write_record(["sample_id", "x", "y", "label"])?,
        None => w.write_record(["sample_id", "x", "y"])?,
    }
    for (id, [x, y]) in result.sample_ids.iter().zip(&result.coordinates) {
        let (x, y) = (x.to_string(), y.to_string());
        match labels {
            Some(l) => {
                let label = l.get(id).map_or("", |l| l.as_str());
                w.write_record([id.as_str(), &x, &y, label])?
            }
            None => w.write_record([id.as_str(), &x, &y])?,
        }
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Writes the CSV and a `.json` sidecar with the run parameters.
pub fn write_projection(
    csv_path: &Path,
    result: &ProjectionResult,
    labels: Option<&BTreeMap<String, Label>>,
) -> anyhow::Result<()> {
    write_atomic(csv_path, &projection_csv(result, labels)?)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    write_json(
        &csv_path.with_extension("json"),
        &ProjectionSidecar {
            points: result.sample_ids.len(),
            perplexity: result.perplexity,
            seed: result.seed,
            iterations: result.iterations,
            kl_divergence: result.kl_divergence,
        },
    )
}
