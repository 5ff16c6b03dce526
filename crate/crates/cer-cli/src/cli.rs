//! The `cer` command line: dataset merging, training, evaluation, frame
//! prediction, and synthetic data generation. Exit codes: 0 success,
//! 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use cer_core::model::ModelKind;
use cer_core::presets::{ensemble_input_dim, Preset};
use cer_core::train::TrainConfig;
use cer_core::LabelSpace;

use crate::checkpoint::{load_model, load_pretrained, CheckpointMeta, ModelSpec};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_model, export_report, render_metrics_table};
use crate::manifest::{load_manifest, merge_unity, save_manifest, DatasetManifest, Split};
use crate::predict::predict_dir;
use crate::synth::{generate_dataset, SynthSpec};
use crate::trainer::{fit, FitConfig};

#[derive(Debug, Parser)]
#[command(
    name = "cer",
    version,
    about = "Compound expression recognition: late-fusion ensemble training, evaluation, and frame prediction"
)]
pub struct Cli {
    /// Key=value config file (defaults < file < CER_* env < flags).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Random seed for shuffling, initialization, dropout, and augmentation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory. Default: runs/<timestamp>-<config hash>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Model scale: 'toy' for fast CPU runs and tests, 'full' for the
    /// reference-scale backbones.
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Full)]
    pub preset: PresetArg,

    /// Keep every execution path single-threaded and seeded. The pipeline is
    /// already deterministic; this guards against future parallel loaders.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Toy,
    Full,
}

impl From<PresetArg> for Preset {
    fn from(arg: PresetArg) -> Preset {
        match arg {
            PresetArg::Toy => Preset::Toy,
            PresetArg::Full => Preset::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelsArg {
    /// The 7 compound expression classes.
    Compound,
    /// The 8 single expression classes.
    Single,
}

impl LabelsArg {
    fn space(self) -> LabelSpace {
        match self {
            LabelsArg::Compound => LabelSpace::compound(),
            LabelsArg::Single => LabelSpace::single(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Vit,
    Manet,
    Resnet,
    Ensemble,
}

impl From<ModelArg> for ModelKind {
    fn from(arg: ModelArg) -> ModelKind {
        match arg {
            ModelArg::Vit => ModelKind::Vit,
            ModelArg::Manet => ModelKind::Manet,
            ModelArg::Resnet => ModelKind::Resnet,
            ModelArg::Ensemble => ModelKind::Ensemble,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pool single-expression manifests and split them into train/val.
    MergeDatasets(MergeArgs),
    /// Train a single-backbone model or the late-fusion ensemble.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled manifest and export reports.
    Evaluate(EvaluateArgs),
    /// Predict classes for every frame image in a directory.
    Predict(PredictArgs),
    /// Generate a synthetic procedural-pattern dataset.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Input manifest CSVs (at least one).
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,

    /// Fraction of pooled records that goes to validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,

    /// Split each class separately so proportions match across splits.
    #[arg(long)]
    pub stratified: bool,

    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,

    #[arg(long, value_enum, default_value_t = LabelsArg::Single)]
    pub labels: LabelsArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,

    #[arg(long)]
    pub train_manifest: PathBuf,

    #[arg(long)]
    pub val_manifest: PathBuf,

    #[arg(long, value_enum, default_value_t = LabelsArg::Compound)]
    pub labels: LabelsArg,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub base_lr: Option<f64>,

    #[arg(long)]
    pub warmup_frac: Option<f64>,

    #[arg(long)]
    pub flip_prob: Option<f64>,

    #[arg(long)]
    pub freeze_encoders: Option<bool>,

    #[arg(long)]
    pub image_size: Option<usize>,

    /// Checkpoints whose matching parameters initialize this model
    /// (repeatable; classifier heads may be skipped on shape mismatch).
    #[arg(long)]
    pub init_from: Vec<PathBuf>,

    /// Fail instead of skipping when an --init-from parameter mismatches.
    #[arg(long)]
    pub init_strict: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub manifest: PathBuf,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Also write the full report (per-class precision/recall/F1 at full
    /// precision plus the confusion matrix) as JSON.
    #[arg(long)]
    pub report_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Directory of pre-cropped frame images (png/jpeg), visited in
    /// natural filename order.
    #[arg(long)]
    pub frames_dir: PathBuf,

    #[arg(long)]
    pub out_csv: PathBuf,

    /// Abort on the first undecodable frame instead of writing ERROR rows.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = LabelsArg::Compound)]
    pub labels: LabelsArg,

    /// Images per class.
    #[arg(long, default_value_t = 16)]
    pub per_class: usize,

    #[arg(long)]
    pub image_size: Option<u32>,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let preset: Preset = cli.preset.into();
    let out_dir = cli.out.clone().unwrap_or_else(|| default_out_dir(&cfg));
    match cli.command {
        Command::MergeDatasets(args) => cmd_merge(&cfg, &out_dir, args),
        Command::Train(args) => cmd_train(cfg, preset, &out_dir, args),
        Command::Evaluate(args) => cmd_evaluate(&cfg, &out_dir, args),
        Command::Predict(args) => cmd_predict(&cfg, args),
        Command::SynthData(args) => cmd_synth(&cfg, preset, &out_dir, args),
    }
}

fn default_out_dir(cfg: &PipelineConfig) -> PathBuf {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("runs").join(format!("{secs}-{}", cfg.digest()))
}

fn refuse_overwrite(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for path in paths {
        if path.exists() {
            return Err(Error::Validation(format!(
                "refusing to overwrite {} (pass --force)",
                path.display()
            )));
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct MergeProvenance {
    inputs: Vec<MergeInput>,
    seed: u64,
    val_fraction: f64,
    stratified: bool,
    train_count: usize,
    val_count: usize,
    label_space: Vec<String>,
}

#[derive(serde::Serialize)]
struct MergeInput {
    path: String,
    sha256: String,
    records: usize,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn cmd_merge(cfg: &PipelineConfig, out_dir: &Path, args: MergeArgs) -> Result<()> {
    let space = args.labels.space();
    let val_fraction = args.val_fraction.unwrap_or(cfg.val_fraction);
    let mut manifests = Vec::new();
    let mut inputs = Vec::new();
    for path in &args.inputs {
        let m = load_manifest(path, &space, Split::Train)?;
        inputs.push(MergeInput {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
            records: m.len(),
        });
        manifests.push(m);
    }
    let (train, val) = merge_unity(&manifests, val_fraction, cfg.seed, args.stratified)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train_path = out_dir.join("train.csv");
    let val_path = out_dir.join("val.csv");
    let merge_path = out_dir.join("merge.json");
    refuse_overwrite(&[&train_path, &val_path, &merge_path], args.force)?;
    save_manifest(&train, &train_path)?;
    save_manifest(&val, &val_path)?;
    let provenance = MergeProvenance {
        inputs,
        seed: cfg.seed,
        val_fraction,
        stratified: args.stratified,
        train_count: train.len(),
        val_count: val.len(),
        label_space: space.names().to_vec(),
    };
    let json = serde_json::to_string_pretty(&provenance)
        .map_err(|e| Error::Validation(format!("provenance encoding failed: {e}")))?;
    std::fs::write(&merge_path, json).map_err(|e| Error::io(&merge_path, e))?;
    println!(
        "merged {} manifests: {} train / {} val records -> {}",
        args.inputs.len(),
        train.len(),
        val.len(),
        out_dir.display()
    );
    Ok(())
}

fn model_spec_for(
    kind: ModelKind,
    preset: Preset,
    cfg: &PipelineConfig,
    num_classes: usize,
) -> ModelSpec {
    let input_dim = match kind {
        ModelKind::Vit => preset.vit().output_dim(),
        ModelKind::Manet => preset.manet().output_dim(),
        ModelKind::Resnet => preset.resnet().output_dim(),
        ModelKind::Ensemble => ensemble_input_dim(preset),
    };
    let mut head = preset.head(input_dim, num_classes);
    if let Some(dims) = &cfg.hidden_dims {
        head.hidden_dims = dims.clone();
    }
    if let Some(dropout) = cfg.dropout {
        head.dropout_rate = dropout;
    }
    ModelSpec {
        kind,
        vit: Some(preset.vit()),
        manet: Some(preset.manet()),
        resnet: Some(preset.resnet()),
        head,
    }
}

fn cmd_train(mut cfg: PipelineConfig, preset: Preset, out_dir: &Path, args: TrainArgs) -> Result<()> {
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.base_lr {
        cfg.base_lr = v;
    }
    if let Some(v) = args.warmup_frac {
        cfg.warmup_frac = v;
    }
    if let Some(v) = args.flip_prob {
        cfg.flip_prob = v;
    }
    if let Some(v) = args.freeze_encoders {
        cfg.freeze_encoders = v;
    }
    if let Some(v) = args.image_size {
        cfg.image_size = Some(v);
    }

    let space = args.labels.space();
    let train_manifest = load_manifest(&args.train_manifest, &space, Split::Train)?;
    let val_manifest = load_manifest(&args.val_manifest, &space, Split::Val)?;

    let image_size = cfg.image_size.unwrap_or_else(|| preset.image_size());
    let kind: ModelKind = args.model.into();
    let spec = model_spec_for(kind, preset, &cfg, space.len());
    let (model, mut store) = spec.build(image_size, &space, cfg.seed)?;

    for ckpt in &args.init_from {
        let report = load_pretrained(&mut store, ckpt, args.init_strict)?;
        println!(
            "initialized {} parameters from {} ({} skipped)",
            report.loaded.len(),
            ckpt.display(),
            report.skipped.len()
        );
    }

    let steps_per_epoch = train_manifest.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let warmup_steps = (cfg.warmup_frac * total_steps as f64).round() as u64;

    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        base_lr: cfg.base_lr,
        warmup_steps,
        adam: Default::default(),
        seed: cfg.seed,
        freeze_encoders: cfg.freeze_encoders,
        flip_prob: cfg.flip_prob,
        grad_clip: cfg.grad_clip,
    };
    let fit_cfg = FitConfig {
        train: train_cfg,
        image_size,
        norm: cfg.normalization(),
        out_dir: out_dir.to_path_buf(),
        eval_batch_size: cfg.batch_size,
    };
    let meta = CheckpointMeta::new(&spec, image_size, &cfg.normalization(), &space);
    println!(
        "training {} ({} train / {} val records, {} epochs, warmup {} steps)",
        kind.as_str(),
        train_manifest.len(),
        val_manifest.len(),
        cfg.epochs,
        warmup_steps
    );
    let outcome = fit(
        &model,
        &mut store,
        &meta,
        &train_manifest,
        &val_manifest,
        &fit_cfg,
        |stats| {
            println!(
                "epoch {}/{}  loss {:.6}  val_acc {:.2}  val_f1 {:.2}  lr {:e}",
                stats.epoch + 1,
                cfg.epochs,
                stats.loss,
                stats.val_acc,
                stats.val_f1,
                stats.lr
            );
        },
    )?;
    println!(
        "best val macro-F1 {:.2} at epoch {} -> {}",
        outcome.best_val_f1,
        outcome.best_epoch + 1,
        outcome.best_checkpoint.display()
    );
    println!("last checkpoint -> {}", outcome.last_checkpoint.display());
    Ok(())
}

/// Load a manifest under the checkpoint's taxonomy; if its labels belong to
/// a different builtin taxonomy, say which two disagree.
fn load_manifest_checked(path: &Path, expected: &LabelSpace) -> Result<DatasetManifest> {
    match load_manifest(path, expected, Split::Val) {
        Ok(m) => Ok(m),
        Err(original @ Error::Parse { .. }) => {
            for other in [LabelSpace::compound(), LabelSpace::single()] {
                if other != *expected && load_manifest(path, &other, Split::Val).is_ok() {
                    return Err(Error::Validation(format!(
                        "taxonomy mismatch: manifest {} uses the {}-class taxonomy {:?} \
                         but the checkpoint was trained on the {}-class taxonomy {:?}",
                        path.display(),
                        other.len(),
                        other.names(),
                        expected.len(),
                        expected.names()
                    )));
                }
            }
            Err(original)
        }
        Err(e) => Err(e),
    }
}

fn cmd_evaluate(cfg: &PipelineConfig, out_dir: &Path, args: EvaluateArgs) -> Result<()> {
    let (model, store, meta) = load_model(&args.checkpoint)?;
    let manifest = load_manifest_checked(&args.manifest, &model.label_space)?;
    let batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    let report = evaluate_model(
        &model,
        &store,
        &manifest,
        batch_size,
        meta.image_size,
        &meta.normalization(),
    )?;
    let files = export_report(&report, out_dir)?;
    if let Some(path) = &args.report_json {
        let json = crate::evaluate::report_to_json(&report)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    }
    print!("{}", render_metrics_table(&report));
    println!("reports -> {}", files.metrics_csv.parent().unwrap_or(out_dir).display());
    Ok(())
}

fn cmd_predict(_cfg: &PipelineConfig, args: PredictArgs) -> Result<()> {
    let (model, store, meta) = load_model(&args.checkpoint)?;
    let rows = predict_dir(
        &model,
        &store,
        &args.frames_dir,
        &args.out_csv,
        meta.image_size,
        &meta.normalization(),
        args.strict,
    )?;
    println!("wrote {rows} prediction rows -> {}", args.out_csv.display());
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, preset: Preset, out_dir: &Path, args: SynthArgs) -> Result<()> {
    let space = args.labels.space();
    let spec = SynthSpec {
        per_class: args.per_class,
        image_size: args
            .image_size
            .unwrap_or_else(|| cfg.image_size.unwrap_or_else(|| preset.image_size()) as u32),
        seed: cfg.seed,
    };
    let manifest = generate_dataset(out_dir, &space, &spec)?;
    println!(
        "generated {} images ({} classes x {}) -> {}",
        manifest.len(),
        space.len(),
        spec.per_class,
        out_dir.display()
    );
    Ok(())
}
