//! Per-fold training with the combined objective, evaluation and
//! cross-validation aggregation.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::{augment, normalize, AugmentationConfig};
use crate::fingerprint::fingerprint;
use crate::loss::{combined_loss_and_grad, EmbeddingBatch, LossError, PredictionBatch, RegularizationConfig};
use crate::metrics::{mean_and_std, BinaryMetrics, Confusion};
use crate::nn::{Adam, Backbone, Mode, ResNet, ResNetConfig, Scheduler, Tensor};
use crate::pixels::Image;
use crate::record::{Category, Label, Manifest, SampleRecord};
use crate::review::SamplePrediction;
use crate::rng::stream;
use crate::split::{verify_split, SplitKind, SplitPlan, Violation};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Resnet50,
    Resnet18,
    TinyResnet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Base width of the tiny network; ignored by the others.
    pub width: usize,
    /// Train only the classifier head; feature layers stay in eval mode.
    pub freeze_features: bool,
    /// Weight file to initialize from, resolved by the caller.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<String>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            kind: BackboneKind::Resnet50,
            width: 8,
            freeze_features: false,
            pretrained: None,
        }
    }
}

impl BackboneSpec {
    pub fn tiny(width: usize) -> Self {
        BackboneSpec {
            kind: BackboneKind::TinyResnet,
            width,
            ..Default::default()
        }
    }

    pub fn resnet_config(&self) -> ResNetConfig {
        match self.kind {
            BackboneKind::Resnet50 => ResNetConfig::resnet50(NUM_CLASSES),
            BackboneKind::Resnet18 => ResNetConfig::resnet18(NUM_CLASSES),
            BackboneKind::TinyResnet => ResNetConfig::tiny(self.width.max(1), NUM_CLASSES),
        }
    }

    /// A freshly initialized network.
    pub fn build(&self, seed: u64) -> ResNet {
        let mut net = ResNet::new(self.resnet_config(), seed);
        net.set_frozen_features(self.freeze_features);
        net
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub scheduler: Scheduler,
    pub augmentation: AugmentationConfig,
    pub regularization: RegularizationConfig,
    pub backbone: BackboneSpec,
    pub seed: u64,
    /// Keep the test-set embedding matrix in each fold result.
    pub export_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 30,
            learning_rate: 1e-4,
            scheduler: Scheduler::CosineAnnealing,
            augmentation: AugmentationConfig::default(),
            regularization: RegularizationConfig::default(),
            backbone: BackboneSpec::default(),
            seed: 0,
            export_embeddings: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for training only the head on a frozen extractor.
    pub fn finetune() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            backbone: BackboneSpec {
                freeze_features: true,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.regularization.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config(String::from("batch_size must be at least 1")));
        }
        if self.regularization.alpha > 0.0 && self.batch_size < 2 {
            return Err(TrainError::Config(String::from(
                "batch_size must be at least 2 when alpha > 0",
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Hex digest identifying this configuration.
    pub fn fingerprint(&self) -> String {
        fingerprint(format!("{self:?}").as_bytes())
    }
}

/// Supplies decoded images in `[0, 1]` for manifest records.
pub trait ImageSource {
    fn load(&self, record: &SampleRecord) -> Result<Image, String>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("plan has no fold {0}")]
    FoldIndex(usize),
    #[error("plan violates {} invariant(s), first: {}", .0.len(), .0[0])]
    InvalidPlan(Vec<Violation>),
    #[error("sample `{0}` is not an active manifest record")]
    UnknownSample(String),
    #[error("training set contains a single class ({0}); both OK and nOK are needed")]
    SingleClass(Label),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("test set is empty")]
    EmptyTest,
    #[error("test sample `{0}` reached a training batch")]
    TestLeak(String),
    #[error("cannot load image for `{sample_id}`: {message}")]
    Image { sample_id: String, message: String },
    #[error("image for `{sample_id}` is {found:?}, expected {expected:?}")]
    ImageShape {
        sample_id: String,
        found: [usize; 3],
        expected: [usize; 3],
    },
    /// A failure reported by a caller-supplied factory or fold callback.
    #[error("{0}")]
    External(String),
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<TrainError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub cross_entropy: f64,
    pub snn: f64,
    pub batches: usize,
}

/// Embeddings of the test samples, row per sample in `sample_ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub sample_ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub metrics: BinaryMetrics,
    pub per_category: BTreeMap<Category, BinaryMetrics>,
    pub predictions: Vec<SamplePrediction>,
    pub epoch_losses: Vec<EpochLoss>,
    #[serde(skip)]
    pub embeddings: Option<EmbeddingMatrix>,
}

impl FoldResult {
    pub fn confusion(&self) -> Confusion {
        self.metrics.confusion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub split: SplitKind,
    pub folds: Vec<FoldResult>,
    pub mean_f1: f64,
    /// Sample standard deviation across folds.
    pub std_f1: f64,
    pub mean_f1_arithmetic: f64,
    pub mean_macro_f1: f64,
    pub config_fingerprint: String,
    pub plan_fingerprint: String,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldResult>, cfg: &TrainConfig, plan: &SplitPlan) -> Self {
        let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
        let (mean_f1, std_f1) = mean_and_std(&f1);
        let arith: Vec<f64> = folds.iter().map(|f| f.metrics.f1_arithmetic).collect();
        let macro_f1: Vec<f64> = folds.iter().map(|f| f.metrics.macro_f1).collect();
        CvReport {
            split: plan.strategy.kind,
            mean_f1,
            std_f1,
            mean_f1_arithmetic: mean_and_std(&arith).0,
            mean_macro_f1: mean_and_std(&macro_f1).0,
            folds,
            config_fingerprint: cfg.fingerprint(),
            plan_fingerprint: plan_fingerprint(plan),
        }
    }
}

pub fn plan_fingerprint(plan: &SplitPlan) -> String {
    fingerprint(format!("{plan:?}").as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Progress {
    Epoch {
        fold: usize,
        epoch: usize,
        epochs: usize,
        loss: EpochLoss,
        learning_rate: f64,
    },
    Evaluated {
        fold: usize,
        f1: f64,
    },
}

fn resolve<'m>(
    index: &BTreeMap<&str, &'m SampleRecord>,
    ids: &[String],
) -> Result<Vec<&'m SampleRecord>, TrainError> {
    ids.iter()
        .map(|id| match index.get(id.as_str()) {
            Some(r) if r.is_active() => Ok(*r),
            _ => Err(TrainError::UnknownSample(id.clone())),
        })
        .collect()
}

fn load_checked(
    source: &dyn ImageSource,
    record: &SampleRecord,
    expected: &mut Option<[usize; 3]>,
) -> Result<Image, TrainError> {
    let img = source.load(record).map_err(|message| TrainError::Image {
        sample_id: record.sample_id.clone(),
        message,
    })?;
    let shape = [img.channels, img.height, img.width];
    match expected {
        Some(e) if *e != shape => Err(TrainError::ImageShape {
            sample_id: record.sample_id.clone(),
            found: shape,
            expected: *e,
        }),
        Some(_) => Ok(img),
        None => {
            *expected = Some(shape);
            Ok(img)
        }
    }
}

fn stack(images: Vec<Image>) -> Tensor {
    let (c, h, w) = (images[0].channels, images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    let n = images.len();
    for img in images {
        data.extend_from_slice(&img.data);
    }
    Tensor::from_vec(n, c, h, w, data).expect("uniform image shapes")
}

fn softmax2(logits: &[f32]) -> [f64; 2] {
    let (a, b) = (logits[0] as f64, logits[1] as f64);
    let m = a.max(b);
    let (ea, eb) = (libm::exp(a - m), libm::exp(b - m));
    [ea / (ea + eb), eb / (ea + eb)]
}

const AUGMENT_SALT: u64 = 0x0061_7567_6d65_6e74;

/// Trains `backbone` on the training side of fold `fold` and evaluates it
/// on the test side.
pub fn train_fold<B: Backbone>(
    mut backbone: B,
    manifest: &Manifest,
    plan: &SplitPlan,
    fold: usize,
    cfg: &TrainConfig,
    source: &dyn ImageSource,
    progress: &mut dyn FnMut(&Progress),
) -> Result<(B, FoldResult), TrainError> {
    cfg.validate()?;
    let assignment = plan.fold(fold).ok_or(TrainError::FoldIndex(fold))?;
    let index = manifest.index();
    let train = resolve(&index, &assignment.train)?;
    let test = resolve(&index, &assignment.test)?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if test.is_empty() {
        return Err(TrainError::EmptyTest);
    }
    let classes: BTreeSet<Label> = train.iter().map(|r| r.label).collect();
    if classes.len() < 2 {
        return Err(TrainError::SingleClass(train[0].label));
    }
    let test_ids: BTreeSet<&str> = test.iter().map(|r| r.sample_id.as_str()).collect();

    backbone.set_frozen_features(cfg.backbone.freeze_features);
    let mut adam = Adam::default();
    let mut expected_shape = None;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.scheduler.learning_rate(cfg.learning_rate, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut stream(cfg.seed, epoch as u64 + 1));

        let mut sums = EpochLoss {
            total: 0.0,
            cross_entropy: 0.0,
            snn: 0.0,
            batches: 0,
        };
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() == 1 && cfg.regularization.alpha > 0.0 {
                continue;
            }
            let mut images = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for (pos, &i) in chunk.iter().enumerate() {
                let record = train[i];
                if test_ids.contains(record.sample_id.as_str()) {
                    return Err(TrainError::TestLeak(record.sample_id.clone()));
                }
                let mut img = load_checked(source, record, &mut expected_shape)?;
                let slot = ((epoch as u64) << 32) | (b * cfg.batch_size + pos) as u64;
                augment(&mut img, &cfg.augmentation, &mut stream(cfg.seed ^ AUGMENT_SALT, slot));
                images.push(img);
                labels.push(record.label.class_index().expect("active record"));
            }
            let out = backbone.forward(&stack(images), Mode::Train);
            let dim = backbone.embedding_dim();
            let pred = PredictionBatch::logits(
                out.logits.iter().map(|&v| v as f64).collect(),
                NUM_CLASSES,
                labels.clone(),
            )?;
            let emb = EmbeddingBatch::new(out.embeddings.iter().map(|&v| v as f64).collect(), dim, labels)?;
            let loss = combined_loss_and_grad(&pred, &emb, &cfg.regularization)?;
            backbone.zero_grad();
            let d_emb: Vec<f32> = loss.d_embeddings.iter().map(|&v| v as f32).collect();
            let d_logits: Vec<f32> = loss.d_predictions.iter().map(|&v| v as f32).collect();
            backbone.backward(&d_emb, &d_logits);
            adam.step(&mut backbone, lr as f32);

            sums.total += loss.value;
            sums.cross_entropy += loss.cross_entropy;
            sums.snn += loss.snn;
            sums.batches += 1;
        }
        let n = sums.batches.max(1) as f64;
        let mean = EpochLoss {
            total: sums.total / n,
            cross_entropy: sums.cross_entropy / n,
            snn: sums.snn / n,
            batches: sums.batches,
        };
        progress(&Progress::Epoch {
            fold,
            epoch,
            epochs: cfg.epochs,
            loss: mean,
            learning_rate: lr,
        });
        epoch_losses.push(mean);
    }

    let mut result = evaluate(&mut backbone, &test, fold, cfg, source)?;
    result.epoch_losses = epoch_losses;
    progress(&Progress::Evaluated { fold, f1: result.f1 });
    Ok((backbone, result))
}

/// Evaluation-mode pass over `samples`: normalization only, argmax of the
/// two logits, nOK as the positive class.
pub fn evaluate<B: Backbone + ?Sized>(
    backbone: &mut B,
    samples: &[&SampleRecord],
    fold_index: usize,
    cfg: &TrainConfig,
    source: &dyn ImageSource,
) -> Result<FoldResult, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyTest);
    }
    let batch = cfg.batch_size.max(1);
    let mut expected_shape = None;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut embedding_data = Vec::new();
    for chunk in samples.chunks(batch) {
        let mut images = Vec::with_capacity(chunk.len());
        for record in chunk {
            let mut img = load_checked(source, record, &mut expected_shape)?;
            normalize(&mut img, &cfg.augmentation);
            images.push(img);
        }
        let out = backbone.forward(&stack(images), Mode::Eval);
        for (record, logits) in chunk.iter().zip(out.logits.chunks(NUM_CLASSES)) {
            predictions.push(SamplePrediction::from_probabilities(
                record.sample_id.clone(),
                fold_index,
                record.label,
                softmax2(logits),
            ));
        }
        if cfg.export_embeddings {
            embedding_data.extend_from_slice(&out.embeddings);
        }
    }

    let mut overall = Confusion::default();
    let mut by_category: BTreeMap<Category, Confusion> = BTreeMap::new();
    for (record, p) in samples.iter().zip(&predictions) {
        let pair = (p.predicted == Label::Nok, record.label == Label::Nok);
        overall.add(pair.0, pair.1);
        by_category.entry(record.category).or_default().add(pair.0, pair.1);
    }
    let metrics = overall.metrics();
    Ok(FoldResult {
        fold_index,
        f1: metrics.f1,
        precision: metrics.precision,
        recall: metrics.recall,
        metrics,
        per_category: by_category.into_iter().map(|(k, c)| (k, c.metrics())).collect(),
        predictions,
        epoch_losses: Vec::new(),
        embeddings: cfg.export_embeddings.then(|| EmbeddingMatrix {
            sample_ids: samples.iter().map(|r| r.sample_id.clone()).collect(),
            dim: backbone.embedding_dim(),
            data: embedding_data,
        }),
    })
}

/// Trains every fold on a fresh backbone from `factory` and aggregates the
/// fold F1 scores. `on_fold` sees each trained backbone, e.g. to persist
/// checkpoints.
pub fn run_cv<B: Backbone>(
    manifest: &Manifest,
    plan: &SplitPlan,
    cfg: &TrainConfig,
    source: &dyn ImageSource,
    factory: &mut dyn FnMut(usize) -> Result<B, TrainError>,
    on_fold: &mut dyn FnMut(&mut B, &FoldResult) -> Result<(), TrainError>,
    progress: &mut dyn FnMut(&Progress),
) -> Result<CvReport, TrainError> {
    cfg.validate()?;
    let violations = verify_split(manifest, plan);
    if !violations.is_empty() {
        return Err(TrainError::InvalidPlan(violations));
    }
    let mut folds = Vec::with_capacity(plan.folds.len());
    for fold in 0..plan.folds.len() {
        let wrap = |e: TrainError| TrainError::Fold {
            fold,
            source: Box::new(e),
        };
        let backbone = factory(fold).map_err(wrap)?;
        let (mut backbone, result) =
            train_fold(backbone, manifest, plan, fold, cfg, source, progress).map_err(wrap)?;
        on_fold(&mut backbone, &result).map_err(wrap)?;
        folds.push(result);
    }
    Ok(CvReport::from_folds(folds, cfg, plan))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDelta {
    pub fold_index: usize,
    pub f1_a: f64,
    pub f1_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub folds: Vec<FoldDelta>,
    /// Mean F1 of `b` minus mean F1 of `a`.
    pub mean_delta: f64,
    /// Per category, mean over folds (where both runs have the category)
    /// of `b − a`.
    pub per_category: BTreeMap<Category, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompareError {
    #[error("reports were produced on different split plans")]
    PlanMismatch,
    #[error("reports have {0} and {1} folds")]
    FoldCount(usize, usize),
}

pub fn compare_runs(a: &CvReport, b: &CvReport) -> Result<Comparison, CompareError> {
    if a.plan_fingerprint != b.plan_fingerprint || a.split != b.split {
        return Err(CompareError::PlanMismatch);
    }
    if a.folds.len() != b.folds.len() {
        return Err(CompareError::FoldCount(a.folds.len(), b.folds.len()));
    }
    let folds: Vec<FoldDelta> = a
        .folds
        .iter()
        .zip(&b.folds)
        .map(|(fa, fb)| FoldDelta {
            fold_index: fa.fold_index,
            f1_a: fa.f1,
            f1_b: fb.f1,
            delta: fb.f1 - fa.f1,
        })
        .collect();
    let mut category_deltas: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    for (fa, fb) in a.folds.iter().zip(&b.folds) {
        for (cat, ma) in &fa.per_category {
            if let Some(mb) = fb.per_category.get(cat) {
                category_deltas.entry(*cat).or_default().push(mb.f1 - ma.f1);
            }
        }
    }
    Ok(Comparison {
        mean_delta: b.mean_f1 - a.mean_f1,
        folds,
        per_category: category_deltas
            .into_iter()
            .map(|(k, v)| (k, mean_and_std(&v).0))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{SynthConfig, SyntheticDataset};
    use crate::split::{build_split, SplitStrategy};

    fn quick_config(alpha: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            epochs,
            learning_rate: 3e-3,
            regularization: RegularizationConfig {
                alpha,
                ..Default::default()
            },
            backbone: BackboneSpec::tiny(4),
            ..Default::default()
        }
    }

    fn toy() -> SyntheticDataset {
        SyntheticDataset::generate(&SynthConfig {
            samples: 120,
            groups: 4,
            parts_per_group: 2,
            image_size: 12,
            ..Default::default()
        })
    }

    #[test]
    fn zero_epochs_still_evaluates() {
        let data = toy();
        let plan = build_split(&data.manifest, SplitStrategy::new(SplitKind::RandomS1, 3, 0).unwrap()).unwrap();
        let cfg = quick_config(0.2, 0);
        let (_, r) = train_fold(cfg.backbone.build(0), &data.manifest, &plan, 0, &cfg, &data, &mut |_| {})
            .unwrap();
        assert_eq!(r.predictions.len(), plan.folds[0].test.len());
        assert!(r.epoch_losses.is_empty());
        assert_eq!(r.f1, r.confusion().metrics().f1);
    }

    #[test]
    fn same_seed_same_result() {
        let data = toy();
        let plan = build_split(&data.manifest, SplitStrategy::new(SplitKind::RandomS1, 3, 0).unwrap()).unwrap();
        let cfg = quick_config(0.2, 2);
        let run = || {
            train_fold(cfg.backbone.build(1), &data.manifest, &plan, 1, &cfg, &data, &mut |_| {})
                .unwrap()
                .1
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let mut data = toy();
        for r in &mut data.manifest.records {
            r.label = Label::Ok;
        }
        let plan = build_split(&data.manifest, SplitStrategy::new(SplitKind::RandomS1, 3, 0).unwrap()).unwrap();
        let cfg = quick_config(0.0, 1);
        let err = train_fold(cfg.backbone.build(0), &data.manifest, &plan, 0, &cfg, &data, &mut |_| {})
            .unwrap_err();
        assert_eq!(err, TrainError::SingleClass(Label::Ok));
    }

    #[test]
    fn leaked_test_sample_is_caught() {
        let data = toy();
        let mut plan =
            build_split(&data.manifest, SplitStrategy::new(SplitKind::RandomS1, 3, 0).unwrap()).unwrap();
        let leaked = plan.folds[0].test[0].clone();
        plan.folds[0].train.push(leaked.clone());
        let cfg = quick_config(0.0, 1);
        let err = train_fold(cfg.backbone.build(0), &data.manifest, &plan, 0, &cfg, &data, &mut |_| {})
            .unwrap_err();
        assert_eq!(err, TrainError::TestLeak(leaked));
        // run_cv refuses the plan up front.
        let err = run_cv(
            &data.manifest,
            &plan,
            &cfg,
            &data,
            &mut |f| Ok(cfg.backbone.build(f as u64)),
            &mut |_, _| Ok(()),
            &mut |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::InvalidPlan(_)));
    }

    #[test]
    fn batch_size_one_with_alpha_is_invalid() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..quick_config(0.2, 1)
        };
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
        let cfg = TrainConfig {
            batch_size: 1,
            ..quick_config(0.0, 1)
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn cv_report_structure_and_comparison() {
        let data = toy();
        let plan =
            build_split(&data.manifest, SplitStrategy::new(SplitKind::FunctionalPartS3, 4, 2).unwrap()).unwrap();
        let cfg = TrainConfig {
            export_embeddings: true,
            ..quick_config(0.2, 1)
        };
        let mut seen = 0;
        let report = run_cv(
            &data.manifest,
            &plan,
            &cfg,
            &data,
            &mut |f| Ok(cfg.backbone.build(f as u64)),
            &mut |_, _| {
                seen += 1;
                Ok(())
            },
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(report.folds.len(), 4);
        assert_eq!(seen, 4);
        let f1: Vec<f64> = report.folds.iter().map(|f| f.f1).collect();
        assert_eq!((report.mean_f1, report.std_f1), mean_and_std(&f1));
        let emb = report.folds[0].embeddings.as_ref().unwrap();
        assert_eq!(emb.data.len(), emb.sample_ids.len() * emb.dim);

        let same = compare_runs(&report, &report).unwrap();
        assert!(same.folds.iter().all(|d| d.delta == 0.0));
        assert_eq!(same.mean_delta, 0.0);

        let mut shifted = report.clone();
        for f in &mut shifted.folds {
            f.f1 += 0.05;
        }
        shifted.mean_f1 += 0.05;
        let cmp = compare_runs(&report, &shifted).unwrap();
        assert!((cmp.mean_delta - 0.05).abs() < 1e-12);

        let mut other = report.clone();
        other.plan_fingerprint = String::from("x");
        assert_eq!(compare_runs(&report, &other), Err(CompareError::PlanMismatch));
    }
}
