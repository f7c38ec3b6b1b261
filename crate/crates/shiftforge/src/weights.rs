//! Safetensors checkpoints. Tensor names follow the torchvision ResNet
//! layout (`conv1.weight`, `layer1.0.bn2.running_var`, `fc.bias`, ...), so
//! converted ImageNet weights load directly.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use shiftforge_core::augment::AugmentationConfig;
use shiftforge_core::nn::{Backbone, ResNet};
use shiftforge_core::train::{BackboneSpec, TrainConfig};

use crate::fsio::write_atomic;

/// Metadata key holding the JSON [`CheckpointMeta`].
pub const META_KEY: &str = "shiftforge";

/// What is needed to rebuild and feed a saved network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub backbone: BackboneSpec,
    /// Only the normalization constants matter at inference.
    #[serde(default)]
    pub augmentation: AugmentationConfig,
}

impl CheckpointMeta {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        CheckpointMeta {
            backbone: BackboneSpec {
                pretrained: None,
                ..cfg.backbone.clone()
            },
            augmentation: cfg.augmentation,
        }
    }
}

pub fn checkpoint_bytes(net: &mut dyn Backbone, meta: &CheckpointMeta) -> anyhow::Result<Vec<u8>> {
    let tensors: Vec<(String, Vec<usize>, Vec<u8>)> = net
        .tensors_mut()
        .into_iter()
        .map(|t| {
            let bytes = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            (t.name, t.shape, bytes)
        })
        .collect();
    let views = tensors
        .iter()
        .map(|(name, shape, bytes)| Ok((name.as_str(), TensorView::new(Dtype::F32, shape.clone(), bytes)?)))
        .collect::<Result<Vec<_>, safetensors::SafeTensorError>>()?;
    let metadata = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    Ok(safetensors::serialize(views, Some(metadata))?)
}

pub fn save_checkpoint(path: &Path, net: &mut dyn Backbone, meta: &CheckpointMeta) -> anyhow::Result<()> {
    let bytes = checkpoint_bytes(net, meta)?;
    write_atomic(path, &bytes).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Tensors present in both with different shapes, kept at their
    /// initial values.
    pub shape_mismatch: Vec<String>,
    /// Network tensors absent from the file.
    pub missing: Vec<String>,
    /// File tensors the network does not have.
    pub unexpected: Vec<String>,
}

fn to_f32(view: &TensorView<'_>) -> anyhow::Result<Vec<f32>> {
    let data = view.data();
    Ok(match view.dtype() {
        Dtype::F32 => data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")) as f32)
            .collect(),
        Dtype::BF16 => data
            .chunks_exact(2)
            .map(|b| f32::from_bits((u16::from_le_bytes([b[0], b[1]]) as u32) << 16))
            .collect(),
        other => bail!("unsupported tensor dtype {other:?}; convert to float32"),
    })
}

/// Copies matching tensors from safetensors `bytes` into `net`. With
/// `strict`, any missing tensor or shape mismatch is an error.
pub fn load_weights(net: &mut dyn Backbone, bytes: &[u8], strict: bool) -> anyhow::Result<LoadReport> {
    let file = SafeTensors::deserialize(bytes).context("not a safetensors file")?;
    let mut report = LoadReport::default();
    let mut seen = std::collections::BTreeSet::new();
    for target in net.tensors_mut() {
        let Ok(view) = file.tensor(&target.name) else {
            report.missing.push(target.name);
            continue;
        };
        seen.insert(target.name.clone());
        if view.shape() != target.shape.as_slice() {
            report.shape_mismatch.push(target.name);
            continue;
        }
        let values = to_f32(&view).with_context(|| format!("tensor `{}`", target.name))?;
        target.data.copy_from_slice(&values);
        report.loaded.push(target.name);
    }
    report.unexpected = file
        .names()
        .into_iter()
        .filter(|n| !seen.contains(*n))
        .map(str::to_string)
        .collect();
    report.unexpected.sort();
    if strict && !(report.missing.is_empty() && report.shape_mismatch.is_empty()) {
        bail!(
            "checkpoint does not match the network: missing {:?}, shape mismatch {:?}",
            report.missing,
            report.shape_mismatch
        );
    }
    Ok(report)
}

pub fn checkpoint_meta(bytes: &[u8]) -> anyhow::Result<CheckpointMeta> {
    let (_, meta) = SafeTensors::read_metadata(bytes).context("not a safetensors file")?;
    let json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| anyhow!("checkpoint has no `{META_KEY}` metadata"))?;
    Ok(serde_json::from_str(json)?)
}

/// Rebuilds the network saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> anyhow::Result<(ResNet, CheckpointMeta)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let meta = checkpoint_meta(&bytes).with_context(|| path.display().to_string())?;
    let mut net = meta.backbone.build(0);
    load_weights(&mut net, &bytes, true).with_context(|| path.display().to_string())?;
    Ok((net, meta))
}

/// A fresh network for `spec`, initialized from its pretrained weight file
/// when one is set. Tensors whose shapes differ (the ImageNet classifier
/// head) keep their fresh initialization.
pub fn build_backbone(spec: &BackboneSpec, seed: u64) -> anyhow::Result<ResNet> {
    let mut net = spec.build(seed);
    if let Some(path) = &spec.pretrained {
        let bytes = fs::read(path).with_context(|| format!("cannot read pretrained weights {path}"))?;
        let report = load_weights(&mut net, &bytes, false).with_context(|| path.clone())?;
        if report.loaded.is_empty() {
            bail!("no tensor in {path} matches the {:?} network", spec.kind);
        }
        log::info!(
            "pretrained {path}: {} loaded, {} reinitialized, {} missing",
            report.loaded.len(),
            report.shape_mismatch.len(),
            report.missing.len()
        );
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use shiftforge_core::nn::{Mode, ResNetConfig, Tensor};

    fn input() -> Tensor {
        let data = (0..2 * 3 * 8 * 8).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        Tensor::from_vec(2, 3, 8, 8, data).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs() {
        let meta = CheckpointMeta::from_config(&TrainConfig {
            backbone: BackboneSpec::tiny(4),
            ..Default::default()
        });
        let mut net = meta.backbone.build(3);
        // Move the running statistics away from their initial values.
        net.forward(&input(), Mode::Train);
        let expected = net.forward(&input(), Mode::Eval);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fold-0.safetensors");
        save_checkpoint(&path, &mut net, &meta).unwrap();
        let (mut back, back_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(back.forward(&input(), Mode::Eval), expected);
    }

    #[test]
    fn partial_import_skips_mismatched_head() {
        let mut source = ResNet::new(ResNetConfig::tiny(4, 10), 1);
        let meta = CheckpointMeta::from_config(&TrainConfig::default());
        let bytes = checkpoint_bytes(&mut source, &meta).unwrap();
        let mut target = ResNet::new(ResNetConfig::tiny(4, 2), 2);
        let report = load_weights(&mut target, &bytes, false).unwrap();
        assert_eq!(report.shape_mismatch, ["fc.weight", "fc.bias"]);
        assert!(report.missing.is_empty());
        assert!(report.loaded.contains(&"conv1.weight".to_string()));
        let a = source.tensors_mut().into_iter().find(|t| t.name == "layer2.0.conv1.weight").unwrap().data.clone();
        let b = target.tensors_mut().into_iter().find(|t| t.name == "layer2.0.conv1.weight").unwrap().data.clone();
        assert_eq!(a, b);
        assert!(load_weights(&mut target, &bytes, true).is_err());
    }

    #[test]
    fn foreign_dtypes_and_names() {
        let w = [1.5f64, -2.0];
        let bytes: Vec<u8> = w.iter().flat_map(|v| v.to_le_bytes()).collect();
        let extra = [0u8; 8];
        let file = safetensors::serialize(
            [
                ("fc.bias", TensorView::new(Dtype::F64, vec![2], &bytes).unwrap()),
                ("bn1.num_batches_tracked", TensorView::new(Dtype::I64, vec![1], &extra).unwrap()),
            ],
            None,
        )
        .unwrap();
        let mut net = ResNet::new(ResNetConfig::tiny(2, 2), 0);
        let report = load_weights(&mut net, &file, false).unwrap();
        assert_eq!(report.loaded, ["fc.bias"]);
        assert_eq!(report.unexpected, ["bn1.num_batches_tracked"]);
        let bias = net.tensors_mut().into_iter().find(|t| t.name == "fc.bias").unwrap().data.clone();
        assert_eq!(bias, [1.5, -2.0]);
        assert!(checkpoint_meta(&file).is_err());
        assert!(load_weights(&mut net, b"garbage", false).is_err());
    }
}
