//! Training configuration: built-in defaults, overlaid by a TOML or JSON
//! file, overlaid by command-line flags. The snapshot records which layer
//! supplied every field.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use shiftforge_core::train::TrainConfig;

use crate::Invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    File,
    Cli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub config: TrainConfig,
    /// Dotted field path → the layer that set it.
    pub sources: BTreeMap<String, Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_file: Option<String>,
}

/// Fields that are absent from the serialized defaults but may be set.
const OPTIONAL_KEYS: &[&str] = &["backbone.pretrained"];

fn leaves(value: &Value, prefix: &str, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(v, &path, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        let map = node.as_object_mut().expect("object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return;
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Parses a config file by extension: `.toml` as TOML, anything else as
/// JSON.
pub fn read_config_value(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let value: Value = if is_toml {
        toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(Invalid(format!("{}: expected a table of settings", path.display())).into());
    }
    Ok(value)
}

/// Merges the layers. `file` is the parsed config file, `overrides` are
/// dotted paths set on the command line.
pub fn resolve(file: Option<&Value>, overrides: &[(String, Value)]) -> anyhow::Result<ConfigSnapshot> {
    let mut merged = serde_json::to_value(TrainConfig::default()).expect("serializable defaults");
    let mut known = Vec::new();
    leaves(&merged, "", &mut known);
    let known: BTreeSet<String> = known
        .into_iter()
        .map(|(k, _)| k)
        .chain(OPTIONAL_KEYS.iter().map(|k| k.to_string()))
        .collect();

    let mut from_file = Vec::new();
    if let Some(file) = file {
        leaves(file, "", &mut from_file);
    }
    for (path, value) in from_file.iter().chain(overrides) {
        if !known.contains(path) {
            return Err(Invalid(format!("unknown config key `{path}`")).into());
        }
        set_path(&mut merged, path, value.clone());
    }
    let config: TrainConfig =
        serde_json::from_value(merged).map_err(|e| Invalid(format!("invalid config: {e}")))?;
    config.validate().map_err(|e| Invalid(e.to_string()))?;

    let cli: BTreeSet<&str> = overrides.iter().map(|(k, _)| k.as_str()).collect();
    let file_keys: BTreeSet<&str> = from_file.iter().map(|(k, _)| k.as_str()).collect();
    let mut fields = Vec::new();
    leaves(&serde_json::to_value(&config).expect("serializable"), "", &mut fields);
    let sources = fields
        .into_iter()
        .map(|(k, _)| {
            let source = if cli.contains(k.as_str()) {
                Source::Cli
            } else if file_keys.contains(k.as_str()) {
                Source::File
            } else {
                Source::Default
            };
            (k, source)
        })
        .collect();
    Ok(ConfigSnapshot {
        config,
        sources,
        config_file: None,
    })
}

/// [`resolve`] reading the optional file from disk.
pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> anyhow::Result<ConfigSnapshot> {
    let file = path.map(read_config_value).transpose()?;
    let mut snapshot = resolve(file.as_ref(), overrides)?;
    snapshot.config_file = path.map(|p| p.display().to_string());
    Ok(snapshot)
}
