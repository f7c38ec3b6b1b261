//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use shiftforge_core::augment::normalize;
use shiftforge_core::gradcam::{gradcam, share_scale};
use shiftforge_core::review::{apply_decisions, build_review_queue, QueueMode, ReviewItem, DEFAULT_CONFIDENCE_THRESHOLD};
use shiftforge_core::split::{build_split, verify_split, SplitKind, SplitPlan, SplitStrategy};
use shiftforge_core::summary::summarize;
use shiftforge_core::synth::{SynthConfig, SyntheticDataset};
use shiftforge_core::train::{compare_runs, ImageSource};
use shiftforge_core::tsne::{project_embeddings, TsneConfig};

use crate::fsio::{read_json, to_json_bytes, write_atomic, write_json};
use crate::images::{write_png_rgb, DiskImageSource};
use crate::manifest_io::{read_manifest, write_manifest};
use crate::review_io::{gather_predictions, read_decisions, read_report};
use crate::run::{eval_run, read_embeddings, train_run, RunDir, RunInputs};
use crate::server::{bind, router, serve, ReviewService};
use crate::weights::load_checkpoint;
use crate::{config, export, ingest, losscheck, Invalid};

#[derive(Debug, Parser)]
#[command(name = "shiftforge", version, about = "Group-shift robust defect classification")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest from an annotated image folder.
    Ingest(IngestArgs),
    /// Print label counts and category/part breakdowns of a manifest.
    Summarize(SummarizeArgs),
    /// Create or verify a cross-validation split plan.
    Split(SplitArgs),
    /// Train every fold of a split plan.
    Train(TrainArgs),
    /// Re-evaluate a run's checkpoints, e.g. on a revised manifest.
    Eval(EvalArgs),
    /// Per-fold and per-category F1 differences between two runs.
    Compare(CompareArgs),
    /// Check the regularizer against a reference and finite differences.
    LossCheck(LossCheckArgs),
    /// Label review: build a queue, serve it, apply decisions.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Activation maps and embedding projections.
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Generate the synthetic group-shift dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding `annotations.csv` and the images.
    #[arg(long)]
    pub src: PathBuf,
    /// Manifest to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Tile each image into square patches of this size.
    #[arg(long)]
    pub patch_size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<SplitKind, String> {
    SplitKind::parse(s).ok_or_else(|| format!("unknown strategy `{s}`; expected s1, s2, s3 or s4"))
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct SplitArgs {
    #[command(subcommand)]
    pub verify: Option<SplitCommand>,
    #[arg(long, required = true)]
    pub manifest: Option<PathBuf>,
    /// s1 (random), s2 (acquisition), s3 (functional part) or s4 (category).
    #[arg(long, required = true, value_parser = parse_kind)]
    pub strategy: Option<SplitKind>,
    /// Number of folds; defaults to 5, or 4 for s4.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plan file to write.
    #[arg(long, required = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SplitCommand {
    /// Check a plan against every split rule.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        plan: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackboneArg {
    Resnet50,
    Resnet18,
    Tiny,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchedulerArg {
    Cosine,
    Constant,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    /// TOML or JSON file of settings; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub scheduler: Option<SchedulerArg>,
    /// Weight of the soft nearest neighbor term; 0 trains with cross-entropy
    /// only.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub backbone: Option<BackboneArg>,
    /// Base width of the tiny backbone.
    #[arg(long)]
    pub width: Option<usize>,
    /// Train only the classifier head.
    #[arg(long)]
    pub freeze_features: bool,
    /// Safetensors file to initialize the backbone from.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Store test-set embeddings beside each fold.
    #[arg(long)]
    pub export_embeddings: bool,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut set = |k: &str, v: Value| out.push((k.to_string(), v));
        if let Some(v) = self.epochs {
            set("epochs", v.into());
        }
        if let Some(v) = self.batch_size {
            set("batch_size", v.into());
        }
        if let Some(v) = self.learning_rate {
            set("learning_rate", v.into());
        }
        if let Some(v) = self.scheduler {
            let name = match v {
                SchedulerArg::Cosine => "cosine_annealing",
                SchedulerArg::Constant => "constant",
            };
            set("scheduler", name.into());
        }
        if let Some(v) = self.alpha {
            set("regularization.alpha", v.into());
        }
        if let Some(v) = self.temperature {
            set("regularization.temperature", v.into());
        }
        if let Some(v) = self.seed {
            set("seed", v.into());
        }
        if let Some(v) = self.backbone {
            let name = match v {
                BackboneArg::Resnet50 => "resnet50",
                BackboneArg::Resnet18 => "resnet18",
                BackboneArg::Tiny => "tiny_resnet",
            };
            set("backbone.kind", name.into());
        }
        if let Some(v) = self.width {
            set("backbone.width", v.into());
        }
        if self.freeze_features {
            set("backbone.freeze_features", true.into());
        }
        if let Some(p) = &self.pretrained {
            set("backbone.pretrained", p.display().to_string().into());
        }
        if self.export_embeddings {
            set("export_embeddings", true.into());
        }
        out
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Manifest to evaluate on; defaults to the one the run was trained on.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline run directory or report file.
    pub a: PathBuf,
    /// Candidate run directory or report file.
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    /// Random batches compared against the reference loss.
    #[arg(long, default_value_t = 1000)]
    pub batches: usize,
    /// Random batches checked against finite differences.
    #[arg(long, default_value_t = 100)]
    pub gradient_batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Misclassified,
    LowConfidence,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Collect samples for review from one run or an ensemble of runs.
    BuildQueue {
        /// Run directory or report file; repeat to average several runs.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Confidence below which a sample is flagged (low-confidence mode).
        #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a queue to the review UI.
    Serve {
        #[arg(long)]
        queue: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Decisions file; defaults to `decisions.jsonl` beside the queue.
        #[arg(long)]
        decisions: Option<PathBuf>,
        /// Directory of static UI files.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Write a revised manifest from recorded decisions.
    Apply {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the list of label changes and warnings here.
        #[arg(long)]
        changes: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExplainCommand {
    /// Grad-CAM maps for selected samples, on one shared scale.
    Gradcam {
        /// Fold checkpoint (`model.safetensors`).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated sample ids.
        #[arg(long, value_delimiter = ',', required_unless_present = "samples_file")]
        samples: Vec<String>,
        /// File with one sample id per line.
        #[arg(long)]
        samples_file: Option<PathBuf>,
        /// Target layer, `layer1`...; defaults to the last stage.
        #[arg(long)]
        layer: Option<String>,
        /// Class index to explain (1 = nOK).
        #[arg(long, default_value_t = 1)]
        class: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// 2-D t-SNE projection of exported embeddings.
    Project {
        /// Embeddings metadata file or run directory; repeatable.
        #[arg(long, required = true)]
        embeddings: Vec<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        /// Adds a label column.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// CSV to write; a `.json` sidecar goes beside it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().samples)]
    pub samples: usize,
    #[arg(long, default_value_t = SynthConfig::default().groups)]
    pub groups: usize,
    #[arg(long, default_value_t = SynthConfig::default().parts_per_group)]
    pub parts: usize,
    #[arg(long, default_value_t = SynthConfig::default().image_size)]
    pub image_size: usize,
    #[arg(long, default_value_t = SynthConfig::default().nok_fraction)]
    pub nok_fraction: f64,
    /// Group/class correlation.
    #[arg(long, default_value_t = SynthConfig::default().label_skew)]
    pub label_skew: f64,
    /// Add a gear-wheel group.
    #[arg(long)]
    pub include_gear: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Sets up logging for the chosen verbosity.
pub fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        (false, _) => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .format_timestamp(None)
        .try_init();
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", String::from_utf8(to_json_bytes(value)).expect("utf-8 JSON").trim_end());
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Summarize(a) => emit(&summarize(&read_manifest(&a.manifest)?), a.out.as_deref()),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => {
            let (ra, rb) = (read_report(&a.a)?, read_report(&a.b)?);
            let cmp = compare_runs(&ra, &rb).map_err(|e| Invalid(e.to_string()))?;
            emit(&cmp, a.out.as_deref())
        }
        Command::LossCheck(a) => {
            let report = losscheck::run(a.batches, a.gradient_batches, a.seed);
            emit(&report, None)?;
            if !report.passed {
                bail!(
                    "loss check failed: tolerances {} (value) and {} (gradient)",
                    losscheck::ORACLE_TOLERANCE,
                    losscheck::GRADIENT_TOLERANCE
                );
            }
            Ok(())
        }
        Command::Review(c) => cmd_review(c),
        Command::Explain(c) => cmd_explain(c),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> anyhow::Result<()> {
    let report = ingest::ingest(&a.src, &a.out, a.patch_size)?;
    for id in &report.too_small {
        log::warn!("`{id}`: focus region smaller than one patch");
    }
    log::info!(
        "wrote {} records ({} patches) to {}",
        report.manifest.records.len(),
        report.patches_written,
        a.out.display()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> anyhow::Result<()> {
    if let Some(SplitCommand::Verify { manifest, plan }) = a.verify {
        let m = read_manifest(&manifest)?;
        let p: SplitPlan = read_json(&plan)?;
        let violations = verify_split(&m, &p);
        for v in &violations {
            println!("{v}");
        }
        if !violations.is_empty() {
            bail!(Invalid(format!("{} split rule violation(s)", violations.len())));
        }
        println!("ok: {} folds satisfy every rule", p.folds.len());
        return Ok(());
    }
    let (Some(manifest), Some(kind), Some(out)) = (a.manifest, a.strategy, a.out) else {
        bail!(Invalid(String::from("--manifest, --strategy and --out are required")));
    };
    let strategy = SplitStrategy::new(kind, a.folds.unwrap_or(kind.default_folds()), a.seed)
        .map_err(|e| Invalid(e.to_string()))?;
    let m = read_manifest(&manifest)?;
    let plan = build_split(&m, strategy).map_err(|e| Invalid(e.to_string()))?;
    write_json(&out, &plan)?;
    for f in &plan.folds {
        log::info!("fold {}: {} train, {} test", f.index, f.train.len(), f.test.len());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let snapshot = config::load(a.config.as_deref(), &a.overrides())?;
    let source = DiskImageSource::for_manifest(&a.manifest);
    let report = train_run(&a.manifest, &a.plan, &snapshot, &a.out_dir, &source)?;
    log::info!(
        "{}: mean F1 {:.4} ± {:.4} over {} folds",
        a.out_dir.display(),
        report.mean_f1,
        report.std_f1,
        report.folds.len()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let run = RunDir::new(&a.run_dir);
    let manifest_path = match a.manifest {
        Some(p) => p,
        None => PathBuf::from(read_json::<RunInputs>(&run.inputs())?.manifest_path),
    };
    let manifest = read_manifest(&manifest_path)?;
    let source = DiskImageSource::for_manifest(&manifest_path);
    let report = eval_run(&run, &manifest, &source)?;
    emit(&report, a.out.as_deref())
}

fn cmd_review(c: ReviewCommand) -> anyhow::Result<()> {
    match c {
        ReviewCommand::BuildQueue {
            runs,
            manifest,
            mode,
            threshold,
            out,
        } => {
            let m = read_manifest(&manifest)?;
            let predictions = gather_predictions(&runs)?;
            let mode = match mode {
                ModeArg::Misclassified => QueueMode::Misclassified,
                ModeArg::LowConfidence => QueueMode::LowConfidence,
            };
            let queue = build_review_queue(&predictions, &m, mode, threshold).map_err(|e| Invalid(e.to_string()))?;
            write_json(&out, &queue)?;
            log::info!("{} of {} samples queued", queue.len(), predictions.len());
            Ok(())
        }
        ReviewCommand::Serve {
            queue,
            manifest,
            port,
            host,
            decisions,
            ui,
        } => {
            let items: Vec<ReviewItem> = read_json(&queue)?;
            let m = read_manifest(&manifest)?;
            let source = DiskImageSource::for_manifest(&manifest);
            let decisions = decisions.unwrap_or_else(|| queue.with_file_name("decisions.jsonl"));
            let service = ReviewService::new(items, &m, &source, &decisions)?;
            let app = router(service, ui.as_deref());
            let runtime = tokio::runtime::Runtime::new().context("cannot start the async runtime")?;
            runtime.block_on(async {
                let listener = bind(SocketAddr::new(host, port)).await?;
                log::info!(
                    "review server on http://{}, decisions in {}",
                    listener.local_addr()?,
                    decisions.display()
                );
                serve(listener, app).await
            })
        }
        ReviewCommand::Apply {
            manifest,
            decisions,
            out,
            changes,
        } => {
            let m = read_manifest(&manifest)?;
            let d = read_decisions(&decisions)?;
            let outcome = apply_decisions(&m, &d).map_err(|e| Invalid(e.to_string()))?;
            for w in &outcome.warnings {
                log::warn!("`{}`: {}", w.sample_id, w.message);
            }
            write_manifest(&out, &outcome.manifest).with_context(|| format!("cannot write {}", out.display()))?;
            if let Some(path) = changes {
                #[derive(Serialize)]
                struct Changes<'a> {
                    changes: &'a [shiftforge_core::review::LabelChange],
                    warnings: &'a [shiftforge_core::review::DecisionWarning],
                }
                write_json(
                    &path,
                    &Changes {
                        changes: &outcome.changes,
                        warnings: &outcome.warnings,
                    },
                )?;
            }
            log::info!("{} label change(s) written to {}", outcome.changes.len(), out.display());
            Ok(())
        }
    }
}

fn sample_list(samples: Vec<String>, file: Option<&Path>) -> anyhow::Result<Vec<String>> {
    let mut ids: Vec<String> = samples.into_iter().filter(|s| !s.is_empty()).collect();
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        ids.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
    }
    if ids.is_empty() {
        bail!(Invalid(String::from("no sample ids given")));
    }
    Ok(ids)
}

fn embedding_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let run = RunDir::new(path);
    let plan: SplitPlan = read_json(&run.plan())?;
    let files: Vec<PathBuf> = plan
        .folds
        .iter()
        .map(|f| run.embeddings(f.index))
        .filter(|p| p.is_file())
        .collect();
    if files.is_empty() {
        bail!(Invalid(format!(
            "{} has no exported embeddings; train with --export-embeddings",
            path.display()
        )));
    }
    Ok(files)
}

fn cmd_explain(c: ExplainCommand) -> anyhow::Result<()> {
    match c {
        ExplainCommand::Gradcam {
            model,
            manifest,
            samples,
            samples_file,
            layer,
            class,
            out_dir,
        } => {
            let ids = sample_list(samples, samples_file.as_deref())?;
            let (mut net, meta) = load_checkpoint(&model)?;
            let layer = layer.unwrap_or_else(|| format!("layer{}", meta.backbone.resnet_config().stages.len()));
            let m = read_manifest(&manifest)?;
            let source = DiskImageSource::for_manifest(&manifest);
            let mut maps = Vec::with_capacity(ids.len());
            for id in &ids {
                let record = m
                    .get(id)
                    .ok_or_else(|| Invalid(format!("unknown sample_id `{id}`")))?;
                let mut img = source.load(record).map_err(|e| anyhow::anyhow!(e))?;
                normalize(&mut img, &meta.augmentation);
                maps.push(gradcam(&mut net, id, &img, class, &layer).map_err(|e| Invalid(e.to_string()))?);
            }
            share_scale(&mut maps);
            fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
            for map in &maps {
                export::write_activation(&out_dir, map)?;
            }
            log::info!("{} maps of {layer} written to {}", maps.len(), out_dir.display());
            Ok(())
        }
        ExplainCommand::Project {
            embeddings,
            perplexity,
            seed,
            iterations,
            manifest,
            out,
        } => {
            let mut ids = Vec::new();
            let mut values = Vec::new();
            let mut dim = None;
            for path in &embeddings {
                for file in embedding_files(path)? {
                    let m = read_embeddings(&file)?;
                    if *dim.get_or_insert(m.dim) != m.dim {
                        bail!(Invalid(format!("{}: dimension {} differs from {}", file.display(), m.dim, dim.unwrap_or(0))));
                    }
                    ids.extend(m.sample_ids);
                    values.extend(m.data.iter().map(|&v| v as f64));
                }
            }
            let cfg = TsneConfig {
                perplexity,
                seed,
                iterations,
                ..Default::default()
            };
            let result = project_embeddings(ids, &values, dim.unwrap_or(0), &cfg).map_err(|e| Invalid(e.to_string()))?;
            let labels = manifest
                .map(|p| read_manifest(&p))
                .transpose()?
                .map(|m| m.records.iter().map(|r| (r.sample_id.clone(), r.label)).collect::<BTreeMap<_, _>>());
            export::write_projection(&out, &result, labels.as_ref())?;
            log::info!("{} points projected, KL {:.4}", result.sample_ids.len(), result.kl_divergence);
            Ok(())
        }
    }
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        samples: a.samples,
        groups: a.groups,
        parts_per_group: a.parts,
        image_size: a.image_size,
        nok_fraction: a.nok_fraction,
        label_skew: a.label_skew,
        include_gear: a.include_gear,
        seed: a.seed,
        ..Default::default()
    };
    let data = SyntheticDataset::try_generate(&cfg).map_err(|e| Invalid(e.to_string()))?;
    fs::create_dir_all(a.out_dir.join("images"))
        .with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    for record in &data.manifest.records {
        let img = &data.images[&record.sample_id];
        write_png_rgb(&a.out_dir.join(&record.image_path), &img.to_rgb())?;
    }
    let manifest_path = a.out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &data.manifest)
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;
    write_atomic(&a.out_dir.join("synth.json"), &to_json_bytes(&cfg))?;
    log::info!("{} samples written to {}", data.manifest.records.len(), a.out_dir.display());
    Ok(())
}
