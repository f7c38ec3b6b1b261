//! Run directories: everything needed to reproduce and inspect a
//! cross-validated training run.
//!
//! ```text
//! D/config.json            resolved config with per-field sources
//! D/inputs.json            manifest, plan and config digests
//! D/plan.json              the split plan trained on
//! D/report.json            CvReport
//! D/train.log              progress lines
//! D/folds/fold-K/model.safetensors
//! D/folds/fold-K/result.json
//! D/folds/fold-K/embeddings.f32 + embeddings.json   (when exported)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use shiftforge_core::record::Manifest;
use shiftforge_core::split::SplitPlan;
use shiftforge_core::train::{
    evaluate, run_cv, CvReport, EmbeddingMatrix, FoldResult, Progress, TrainConfig, TrainError,
};

use crate::config::ConfigSnapshot;
use crate::fsio::{read_json, sha256_file, sha256_hex, to_json_bytes, write_atomic, write_json};
use crate::images::DiskImageSource;
use crate::manifest_io::read_manifest;
use crate::weights::{build_backbone, load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::Invalid;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn inputs(&self) -> PathBuf {
        self.root.join("inputs.json")
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("train.log")
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.root.join("folds").join(format!("fold-{fold}"))
    }

    pub fn checkpoint(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("model.safetensors")
    }

    pub fn fold_result(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("result.json")
    }

    pub fn embeddings(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("embeddings.json")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInputs {
    pub manifest_path: String,
    pub manifest_sha256: String,
    pub plan_path: String,
    pub plan_sha256: String,
    /// Digest of `config.json` as written.
    pub config_sha256: String,
    pub data_root: String,
    pub tool_version: String,
}

/// Sidecar describing a raw little-endian float32 matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingsMeta {
    pub data_file: String,
    pub dtype: String,
    pub byte_order: String,
    /// `[rows, dim]`.
    pub shape: [usize; 2],
    pub sample_ids: Vec<String>,
}

/// Writes `meta_path` and the matrix file beside it (same stem, `.f32`).
pub fn write_embeddings(meta_path: &Path, matrix: &EmbeddingMatrix) -> anyhow::Result<()> {
    let data_path = meta_path.with_extension("f32");
    let data_file = data_path
        .file_name()
        .expect("file name")
        .to_string_lossy()
        .into_owned();
    let bytes: Vec<u8> = matrix.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&data_path, &bytes).with_context(|| format!("cannot write {}", data_path.display()))?;
    write_json(
        meta_path,
        &EmbeddingsMeta {
            data_file,
            dtype: String::from("float32"),
            byte_order: String::from("little"),
            shape: [matrix.sample_ids.len(), matrix.dim],
            sample_ids: matrix.sample_ids.clone(),
        },
    )
}

pub fn read_embeddings(meta_path: &Path) -> anyhow::Result<EmbeddingMatrix> {
    let meta: EmbeddingsMeta = read_json(meta_path)?;
    if meta.dtype != "float32" || meta.byte_order != "little" {
        bail!(Invalid(format!(
            "{}: unsupported layout {} {}",
            meta_path.display(),
            meta.byte_order,
            meta.dtype
        )));
    }
    let data_path = meta_path.parent().unwrap_or(Path::new(".")).join(&meta.data_file);
    let bytes = fs::read(&data_path).with_context(|| format!("cannot read {}", data_path.display()))?;
    let [rows, dim] = meta.shape;
    if bytes.len() != rows * dim * 4 || meta.sample_ids.len() != rows {
        bail!(Invalid(format!(
            "{}: {} bytes and {} ids do not match shape {rows}×{dim}",
            data_path.display(),
            bytes.len(),
            meta.sample_ids.len()
        )));
    }
    Ok(EmbeddingMatrix {
        sample_ids: meta.sample_ids,
        dim,
        data: bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    })
}

pub fn progress_line(p: &Progress) -> String {
    match p {
        Progress::Epoch {
            fold,
            epoch,
            epochs,
            loss,
            learning_rate,
        } => format!(
            "fold {fold} epoch {}/{epochs} loss {:.5} ce {:.5} snn {:.5} lr {learning_rate:.3e}",
            epoch + 1,
            loss.total,
            loss.cross_entropy,
            loss.snn
        ),
        Progress::Evaluated { fold, f1 } => format!("fold {fold} evaluated f1 {f1:.4}"),
    }
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000).wrapping_add(fold as u64)
}

fn save_fold(
    run: &RunDir,
    net: &mut dyn shiftforge_core::nn::Backbone,
    result: &FoldResult,
    cfg: &TrainConfig,
) -> anyhow::Result<()> {
    let k = result.fold_index;
    save_checkpoint(&run.checkpoint(k), net, &CheckpointMeta::from_config(cfg))?;
    write_json(&run.fold_result(k), result)?;
    if let Some(matrix) = &result.embeddings {
        write_embeddings(&run.embeddings(k), matrix)?;
    }
    Ok(())
}

/// Trains every fold of `plan` and fills the run directory.
pub fn train_run(
    manifest_path: &Path,
    plan_path: &Path,
    snapshot: &ConfigSnapshot,
    out: &Path,
    source: &DiskImageSource,
) -> anyhow::Result<CvReport> {
    let manifest = read_manifest(manifest_path)?;
    let plan: SplitPlan = read_json(plan_path)?;
    let run = RunDir::new(out);
    fs::create_dir_all(&run.root).with_context(|| format!("cannot create {}", run.root.display()))?;

    let config_bytes = to_json_bytes(snapshot);
    write_atomic(&run.config(), &config_bytes)?;
    write_json(&run.plan(), &plan)?;
    write_json(
        &run.inputs(),
        &RunInputs {
            manifest_path: manifest_path.display().to_string(),
            manifest_sha256: sha256_file(manifest_path)?,
            plan_path: plan_path.display().to_string(),
            plan_sha256: sha256_file(plan_path)?,
            config_sha256: sha256_hex(&config_bytes),
            data_root: source.root.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )?;

    let mut log = fs::File::create(run.log()).with_context(|| format!("cannot create {}", run.log().display()))?;
    let cfg = &snapshot.config;
    let report = run_cv(
        &manifest,
        &plan,
        cfg,
        source,
        &mut |fold| build_backbone(&cfg.backbone, fold_seed(cfg.seed, fold)).map_err(|e| TrainError::External(format!("{e:#}"))),
        &mut |net, result| save_fold(&run, net, result, cfg).map_err(|e| TrainError::External(format!("{e:#}"))),
        &mut |p| {
            let line = progress_line(p);
            log::info!("{line}");
            let _ = writeln!(log, "{line}");
        },
    )
    .map_err(classify)?;
    write_json(&run.report(), &report)?;
    Ok(report)
}

/// Marks configuration and data problems as validation errors.
pub fn classify(e: TrainError) -> anyhow::Error {
    fn invalid(e: &TrainError) -> bool {
        match e {
            TrainError::Config(_)
            | TrainError::Loss(_)
            | TrainError::FoldIndex(_)
            | TrainError::InvalidPlan(_)
            | TrainError::UnknownSample(_)
            | TrainError::SingleClass(_)
            | TrainError::EmptyTrain
            | TrainError::EmptyTest
            | TrainError::TestLeak(_)
            | TrainError::ImageShape { .. } => true,
            TrainError::Image { .. } | TrainError::External(_) => false,
            TrainError::Fold { source, .. } => invalid(source),
        }
    }
    if invalid(&e) {
        Invalid(e.to_string()).into()
    } else {
        anyhow::Error::new(e)
    }
}

/// Re-evaluates each fold's checkpoint on its test side of `manifest`,
/// skipping samples that are no longer active.
pub fn eval_run(run: &RunDir, manifest: &Manifest, source: &DiskImageSource) -> anyhow::Result<CvReport> {
    let snapshot: ConfigSnapshot = read_json(&run.config())?;
    let plan: SplitPlan = read_json(&run.plan())?;
    let cfg = snapshot.config;
    let index = manifest.index();
    let mut folds = Vec::new();
    for assignment in &plan.folds {
        let k = assignment.index;
        let (mut net, _) = load_checkpoint(&run.checkpoint(k))?;
        let test: Vec<_> = assignment
            .test
            .iter()
            .filter_map(|id| index.get(id.as_str()).copied())
            .filter(|r| r.is_active())
            .collect();
        let result = evaluate(&mut net, &test, k, &cfg, source)
            .map_err(|e| classify(TrainError::Fold { fold: k, source: Box::new(e) }))?;
        folds.push(result);
    }
    Ok(CvReport::from_folds(folds, &cfg, &plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix {
            sample_ids: vec!["a".into(), "b".into()],
            dim: 3,
            data: vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25],
        };
        let meta = dir.path().join("fold/embeddings.json");
        write_embeddings(&meta, &m).unwrap();
        assert_eq!(fs::metadata(dir.path().join("fold/embeddings.f32")).unwrap().len(), 24);
        assert_eq!(read_embeddings(&meta).unwrap(), m);

        fs::write(dir.path().join("fold/embeddings.f32"), [0u8; 20]).unwrap();
        let err = read_embeddings(&meta).unwrap_err();
        assert!(err.downcast_ref::<Invalid>().is_some());
    }

    #[test]
    fn train_errors_are_classified() {
        let wrapped = TrainError::Fold {
            fold: 2,
            source: Box::new(TrainError::SingleClass(shiftforge_core::record::Label::Ok)),
        };
        assert!(classify(wrapped).downcast_ref::<Invalid>().is_some());
        let io = TrainError::Image {
            sample_id: "x".into(),
            message: "gone".into(),
        };
        assert!(classify(io).downcast_ref::<Invalid>().is_none());
    }
}
