//! Decoding images from disk into the core pixel types.

use std::ffi::OsString;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::Context;
use image::ImageFormat;
use shiftforge_core::patch::RgbImage;
use shiftforge_core::pixels::Image;
use shiftforge_core::record::SampleRecord;
use shiftforge_core::train::ImageSource;

use crate::fsio::write_atomic;

pub const DATA_DIR_ENV: &str = "SHIFTFORGE_DATA_DIR";

/// The directory relative image paths resolve against: `override_dir` when
/// set, otherwise the manifest's own directory.
pub fn data_root(override_dir: Option<OsString>, manifest_path: &Path) -> PathBuf {
    match override_dir {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => manifest_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    }
}

/// [`data_root`] with the override taken from the environment.
pub fn data_root_from_env(manifest_path: &Path) -> PathBuf {
    data_root(std::env::var_os(DATA_DIR_ENV), manifest_path)
}

pub fn read_rgb(path: &Path) -> anyhow::Result<RgbImage> {
    let img = image::open(path)
        .with_context(|| format!("cannot decode {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::new(w, h, img.into_raw()).expect("decoder returns w*h*3 bytes"))
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let buf = image::RgbImage::from_raw(img.width, img.height, img.data.clone()).expect("sized buffer");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_png_gray(width: u32, height: u32, pixels: Vec<u8>) -> Vec<u8> {
    let buf = image::GrayImage::from_raw(width, height, pixels).expect("sized buffer");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> anyhow::Result<()> {
    write_atomic(path, &encode_png_rgb(img)).with_context(|| format!("cannot write {}", path.display()))
}

/// `image/png` or `image/jpeg` from the file extension.
pub fn content_type(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some("image/png"),
        "jpg" | "jpeg" => Some("image/jpeg"),
        _ => None,
    }
}

/// Loads manifest images from a directory tree.
#[derive(Debug, Clone)]
pub struct DiskImageSource {
    pub root: PathBuf,
}

impl DiskImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskImageSource { root: root.into() }
    }

    pub fn for_manifest(manifest_path: &Path) -> Self {
        Self::new(data_root_from_env(manifest_path))
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        self.resolve_path(&record.image_path)
    }

    pub fn resolve_path(&self, image_path: &str) -> PathBuf {
        let p = Path::new(image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl ImageSource for DiskImageSource {
    fn load(&self, record: &SampleRecord) -> Result<Image, String> {
        read_rgb(&self.resolve(record))
            .map(|rgb| Image::from_rgb(&rgb))
            .map_err(|e| format!("{e:#}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_root_precedence() {
        let m = Path::new("/data/set/manifest.jsonl");
        assert_eq!(data_root(None, m), PathBuf::from("/data/set"));
        assert_eq!(data_root(Some("/elsewhere".into()), m), PathBuf::from("/elsewhere"));
        assert_eq!(data_root(Some("".into()), m), PathBuf::from("/data/set"));
        assert_eq!(data_root(None, Path::new("manifest.jsonl")), PathBuf::from("."));
    }

    #[test]
    fn png_round_trip_through_source() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = RgbImage::new(3, 2, (0..18).map(|v| v * 10).collect()).unwrap();
        write_png_rgb(&dir.path().join("img/a.png"), &rgb).unwrap();
        assert_eq!(read_rgb(&dir.path().join("img/a.png")).unwrap(), rgb);

        let source = DiskImageSource::new(dir.path());
        let mut record: SampleRecord = serde_json::from_value(serde_json::json!({
            "sample_id": "a", "image_path": "img/a.png", "label": "ok", "part_id": "p",
            "functional_part_id": "f", "category": "spline", "transmission": "manual", "side": "a"
        }))
        .unwrap();
        let img = source.load(&record).unwrap();
        assert_eq!((img.channels, img.height, img.width), (3, 2, 3));
        assert_eq!(img, Image::from_rgb(&rgb));
        record.image_path = "img/missing.png".into();
        assert!(source.load(&record).unwrap_err().contains("missing.png"));
    }

    #[test]
    fn content_types() {
        assert_eq!(content_type(Path::new("a.PNG")), Some("image/png"));
        assert_eq!(content_type(Path::new("a.jpeg")), Some("image/jpeg"));
        assert_eq!(content_type(Path::new("a.bmp")), None);
    }
}
