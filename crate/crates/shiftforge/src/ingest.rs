//! Converting an annotated image folder into a manifest.
//!
//! The source directory holds `annotations.csv` with a header row and one
//! row per image:
//!
//! ```text
//! image_path,label,part_id,functional_part_id,category,transmission,side[,sample_id][,focus_x,focus_y,focus_width,focus_height]
//! ```
//!
//! Without a patch size every row becomes one record pointing at its image.
//! With a patch size each image is tiled over its focus region (the whole
//! image when the focus columns are empty) and each tile is written to
//! `patches/` beside the output manifest, inheriting the row's metadata.

use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;
use shiftforge_core::patch::{extract_patches, Rect};
use shiftforge_core::record::{Category, Label, Manifest, SampleRecord, Side, Transmission};

use crate::images::{read_rgb, write_png_rgb};
use crate::manifest_io::write_manifest;
use crate::Invalid;

pub const ANNOTATIONS_FILE: &str = "annotations.csv";

#[derive(Debug, Deserialize)]
struct Row {
    #[serde(alias = "image", alias = "file", alias = "filename")]
    image_path: String,
    label: String,
    part_id: String,
    functional_part_id: String,
    category: String,
    transmission: String,
    side: String,
    #[serde(default)]
    sample_id: Option<String>,
    #[serde(default)]
    focus_x: Option<u32>,
    #[serde(default)]
    focus_y: Option<u32>,
    #[serde(default)]
    focus_width: Option<u32>,
    #[serde(default)]
    focus_height: Option<u32>,
}

fn words(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

pub fn parse_label(s: &str) -> Option<Label> {
    match words(s).as_str() {
        "ok" | "0" => Some(Label::Ok),
        "nok" | "n_ok" | "not_ok" | "1" => Some(Label::Nok),
        "discard" | "discarded" => Some(Label::Discard),
        _ => None,
    }
}

pub fn parse_category(s: &str) -> Option<Category> {
    let w = words(s);
    let w = w.strip_suffix('s').unwrap_or(&w);
    Category::parse(w).or(match w {
        "gear" | "gearwheel" => Some(Category::GearWheel),
        "ring_cone" | "synchronizer_ring" => Some(Category::SynchronizerRingCone),
        "body" => Some(Category::SynchronizerBody),
        "collar" => Some(Category::SynchronizerCollar),
        _ => None,
    })
}

fn parse_transmission(s: &str) -> Option<Transmission> {
    match words(s).as_str() {
        "automatic" | "auto" => Some(Transmission::Automatic),
        "manual" => Some(Transmission::Manual),
        _ => None,
    }
}

fn parse_side(s: &str) -> Option<Side> {
    match words(s).as_str() {
        "a" | "side_a" => Some(Side::A),
        "b" | "side_b" => Some(Side::B),
        _ => None,
    }
}

/// `path` relative to `base` when it lies beneath it, otherwise absolute.
fn relative_to(path: &Path, base: &Path) -> String {
    match path.strip_prefix(base) {
        Ok(rel) => rel
            .components()
            .filter(|c| matches!(c, Component::Normal(_)))
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/"),
        Err(_) => path.to_string_lossy().into_owned(),
    }
}

fn default_id(image_path: &str) -> String {
    Path::new(image_path)
        .with_extension("")
        .components()
        .filter(|c| matches!(c, Component::Normal(_)))
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub manifest: Manifest,
    pub patches_written: usize,
    /// Rows whose focus region could not hold a single patch.
    pub too_small: Vec<String>,
}

/// Reads `src/annotations.csv` and writes the manifest to `out`.
pub fn ingest(src: &Path, out: &Path, patch_size: Option<u32>) -> anyhow::Result<IngestReport> {
    let csv_path = src.join(ANNOTATIONS_FILE);
    if !csv_path.is_file() {
        return Err(Invalid(format!("{} not found", csv_path.display())).into());
    }
    let out_dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let src_abs = std::path::absolute(src)?;
    let out_abs = std::path::absolute(&out_dir)?;

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&csv_path)
        .with_context(|| format!("cannot open {}", csv_path.display()))?;
    let mut records = Vec::new();
    let mut patches_written = 0;
    let mut too_small = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Invalid(format!("{}:{line}: {e}", csv_path.display())))?;
        let field = |what: &str, value: &str| Invalid(format!("{}:{line}: unknown {what} `{value}`", csv_path.display()));
        let label = parse_label(&row.label).ok_or_else(|| field("label", &row.label))?;
        let category = parse_category(&row.category).ok_or_else(|| field("category", &row.category))?;
        let transmission =
            parse_transmission(&row.transmission).ok_or_else(|| field("transmission", &row.transmission))?;
        let side = parse_side(&row.side).ok_or_else(|| field("side", &row.side))?;
        let base_id = row.sample_id.clone().unwrap_or_else(|| default_id(&row.image_path));
        let record = |sample_id: String, image_path: String, patch_origin| SampleRecord {
            sample_id,
            image_path,
            label,
            part_id: row.part_id.clone(),
            functional_part_id: row.functional_part_id.clone(),
            category,
            transmission,
            side,
            patch_origin,
        };
        let image_abs = src_abs.join(&row.image_path);

        let Some(size) = patch_size else {
            records.push(record(base_id, relative_to(&image_abs, &out_abs), None));
            continue;
        };
        let rgb = read_rgb(&image_abs)?;
        let region = match (row.focus_x, row.focus_y, row.focus_width, row.focus_height) {
            (None, None, None, None) => Rect::full(&rgb),
            (Some(x), Some(y), Some(width), Some(height)) => Rect { x, y, width, height },
            _ => bail!(Invalid(format!(
                "{}:{line}: focus columns must be all set or all empty",
                csv_path.display()
            ))),
        };
        let tiles = extract_patches(&rgb, size, region)
            .map_err(|e| Invalid(format!("{}:{line}: {e}", csv_path.display())))?;
        if tiles.region_too_small {
            too_small.push(base_id.clone());
        }
        for patch in tiles.patches {
            let (x, y) = patch.origin;
            let id = format!("{base_id}_{x}_{y}");
            let rel = format!("patches/{id}.png");
            write_png_rgb(&out_dir.join(&rel), &patch.image)?;
            patches_written += 1;
            records.push(record(id, rel, Some(patch.origin)));
        }
    }
    let manifest = Manifest::new(records).map_err(|e| Invalid(e.to_string()))?;
    write_manifest(out, &manifest).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(IngestReport {
        manifest,
        patches_written,
        too_small,
    })
}
