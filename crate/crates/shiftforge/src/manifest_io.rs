//! JSON-lines manifest files: one `SampleRecord` per line, optionally
//! preceded by a `{"schema_version": N}` header line.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use shiftforge_core::record::{Manifest, ManifestError, SampleRecord, SCHEMA_VERSION};

use crate::fsio::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum ManifestIoError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed JSON: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: record does not match the schema: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}{}: {source}", .line.map(|l| format!(":{l}")).unwrap_or_default())]
    Integrity {
        path: PathBuf,
        line: Option<usize>,
        source: ManifestError,
    },
}

/// Parses manifest text. `path` only labels error messages; line numbers
/// are one-based.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest, ManifestIoError> {
    let mut records = Vec::new();
    let mut lines_of = Vec::new();
    let mut schema_version = SCHEMA_VERSION;
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(trimmed).map_err(|e| ManifestIoError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let is_header = first && value.get("schema_version").is_some() && value.get("sample_id").is_none();
        first = false;
        if is_header {
            schema_version = value["schema_version"]
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| ManifestIoError::Schema {
                    path: path.to_path_buf(),
                    line,
                    message: String::from("schema_version must be a non-negative integer"),
                })?;
            continue;
        }
        let record: SampleRecord = serde_json::from_value(value).map_err(|e| ManifestIoError::Schema {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        records.push(record);
        lines_of.push(line);
    }
    let manifest = Manifest {
        schema_version,
        records,
    };
    manifest.validate().map_err(|source| ManifestIoError::Integrity {
        path: path.to_path_buf(),
        line: source.record_index().map(|i| lines_of[i]),
        source,
    })?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, ManifestIoError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path)
}

pub fn manifest_to_string(manifest: &Manifest) -> String {
    let mut out = String::new();
    for record in &manifest.records {
        out.push_str(&serde_json::to_string(record).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Atomically replaces `path` with the manifest.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> std::io::Result<()> {
    write_atomic(path, manifest_to_string(manifest).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use shiftforge_core::record::{Category, Label, Side, Transmission};

    fn record(id: &str, fpid: &str, category: Category) -> SampleRecord {
        SampleRecord {
            sample_id: id.into(),
            image_path: format!("img/{id}.png"),
            label: Label::Nok,
            part_id: "p1".into(),
            functional_part_id: fpid.into(),
            category,
            transmission: Transmission::Automatic,
            side: Side::B,
            patch_origin: Some((128, 0)),
        }
    }

    fn p() -> &'static Path {
        Path::new("m.jsonl")
    }

    #[test]
    fn round_trip() {
        let m = Manifest::new(vec![
            record("a", "f1", Category::Spline),
            record("b", "f2", Category::GearWheel),
        ])
        .unwrap();
        let text = manifest_to_string(&m);
        assert!(text.contains(r#""label":"nok""#));
        assert!(text.contains(r#""category":"gear_wheel""#));
        assert_eq!(parse_manifest(&text, p()).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn header_and_blank_lines() {
        let body = serde_json::to_string(&record("a", "f", Category::Spline)).unwrap();
        let text = format!("{{\"schema_version\":1}}\n\n{body}\n");
        assert_eq!(parse_manifest(&text, p()).unwrap().records.len(), 1);
        let text = format!("{{\"schema_version\":7}}\n{body}\n");
        assert!(matches!(
            parse_manifest(&text, p()),
            Err(ManifestIoError::Integrity {
                line: None,
                source: ManifestError::UnsupportedSchema(7),
                ..
            })
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let good = serde_json::to_string(&record("a", "f", Category::Spline)).unwrap();
        let err = parse_manifest(&format!("{good}\n{{not json\n"), p()).unwrap_err();
        assert!(matches!(err, ManifestIoError::Parse { line: 2, .. }), "{err}");

        let bad_label = good.replace("\"nok\"", "\"broken\"");
        let err = parse_manifest(&format!("{good}\n\n{bad_label}\n"), p()).unwrap_err();
        assert!(matches!(err, ManifestIoError::Schema { line: 3, .. }), "{err}");

        let extra = good.replacen('{', "{\"color\":\"red\",", 1);
        let err = parse_manifest(&extra, p()).unwrap_err();
        assert!(matches!(err, ManifestIoError::Schema { line: 1, .. }), "{err}");

        let err = parse_manifest(&format!("{good}\n{good}\n"), p()).unwrap_err();
        assert!(matches!(
            err,
            ManifestIoError::Integrity {
                line: Some(2),
                source: ManifestError::DuplicateId { .. },
                ..
            }
        ));
        assert!(err.to_string().starts_with("m.jsonl:2: "), "{err}");

        let other = serde_json::to_string(&record("b", "f", Category::GearWheel)).unwrap();
        let err = parse_manifest(&format!("{good}\n{other}\n"), p()).unwrap_err();
        assert!(matches!(
            err,
            ManifestIoError::Integrity {
                line: Some(2),
                source: ManifestError::InconsistentCategory { .. },
                ..
            }
        ));
    }
}
