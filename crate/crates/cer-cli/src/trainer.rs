//! The fit loop: seeded epoch batching, optimization steps, per-epoch
//! validation, history CSV, and best/last checkpointing. Model selection is
//! by validation macro-F1.

use std::io::Write;
use std::path::PathBuf;

use cer_core::model::Model;
use cer_core::optim::Adam;
use cer_core::train::{train_step, TrainConfig, TrainState};
use cer_core::{CoreError, ImageBatch, ParamStore};

use crate::batches::batch_plan;
use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_model;
use crate::imaging::{load_batch, Normalization};
use crate::manifest::DatasetManifest;

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub train: TrainConfig,
    pub image_size: usize,
    pub norm: Normalization,
    pub out_dir: PathBuf,
    pub eval_batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub history_path: PathBuf,
    pub history: Vec<EpochStats>,
    pub best_val_f1: f64,
    pub best_epoch: usize,
}

/// One pass over pre-batched data. Returns the epoch mean loss.
pub fn train_epoch(
    model: &Model,
    store: &mut ParamStore,
    opt: &mut Adam,
    batches: impl IntoIterator<Item = Result<ImageBatch>>,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (index, batch) in batches.into_iter().enumerate() {
        let batch = batch?;
        let loss = train_step(model, store, opt, batch, cfg, state).map_err(|e| match e {
            CoreError::Numeric(msg) => {
                Error::Core(CoreError::Numeric(format!("batch {index}: {msg}")))
            }
            other => Error::Core(other),
        })?;
        total += loss;
        count += 1;
    }
    state.epoch += 1;
    let mean = if count > 0 { total / count as f64 } else { 0.0 };
    state.running_loss = mean;
    Ok(mean)
}

/// Seed for the shuffle of a given epoch, derived so epochs differ but runs
/// with the same config are identical.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ ((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn fit(
    model: &Model,
    store: &mut ParamStore,
    meta: &CheckpointMeta,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    cfg: &FitConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<FitOutcome> {
    cfg.train.validate().map_err(Error::Core)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    if cfg.train.freeze_encoders {
        for encoder in &model.encoders {
            store.set_trainable_prefix(&format!("{}.", encoder.kind().as_str()), false);
        }
    }

    let mut opt = Adam::new(store, cfg.train.adam);
    let mut state = TrainState::new(&cfg.train);

    let history_path = cfg.out_dir.join("history.csv");
    let mut history_file =
        std::fs::File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    writeln!(history_file, "epoch,loss,val_acc,val_f1,lr")
        .map_err(|e| Error::io(&history_path, e))?;

    let best_path = cfg.out_dir.join("best.ckpt");
    let last_path = cfg.out_dir.join("last.ckpt");
    let mut history = Vec::with_capacity(cfg.train.epochs);
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;

    for epoch in 0..cfg.train.epochs {
        let plan = batch_plan(
            train_manifest.len(),
            cfg.train.batch_size,
            true,
            epoch_seed(cfg.train.seed, epoch),
        );
        let batches = plan
            .into_iter()
            .map(|idx| load_batch(train_manifest, &idx, cfg.image_size, &cfg.norm));
        let loss = train_epoch(model, store, &mut opt, batches, &cfg.train, &mut state)?;

        let report = evaluate_model(
            model,
            store,
            val_manifest,
            cfg.eval_batch_size,
            cfg.image_size,
            &cfg.norm,
        )?;
        let stats = EpochStats {
            epoch,
            loss,
            val_acc: report.accuracy,
            val_f1: report.macro_f1,
            lr: state.current_lr,
        };
        // Default float formatting round-trips exactly, so the logged best
        // F1 can be compared to a recomputed one at full precision.
        writeln!(
            history_file,
            "{},{},{},{},{}",
            stats.epoch, stats.loss, stats.val_acc, stats.val_f1, stats.lr
        )
        .map_err(|e| Error::io(&history_path, e))?;
        history_file.flush().map_err(|e| Error::io(&history_path, e))?;

        if stats.val_f1 > best_f1 {
            best_f1 = stats.val_f1;
            best_epoch = epoch;
            state.best_val_f1 = best_f1;
            save_checkpoint(&best_path, meta, store)?;
        }
        progress(&stats);
        history.push(stats);
    }
    save_checkpoint(&last_path, meta, store)?;

    Ok(FitOutcome {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        history_path,
        history,
        best_val_f1: best_f1,
        best_epoch,
    })
}
