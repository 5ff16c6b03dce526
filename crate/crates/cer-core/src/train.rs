//! Training-step math: config, state, the warmup schedule, and one
//! forward/backward/update step. Epoch orchestration (data loading,
//! checkpoints, history files) lives in the companion crate.

use alloc::format;

use crate::batch::{augment, ImageBatch};
use crate::error::{CoreError, Result};
use crate::loss::cross_entropy_with_grad;
use crate::model::Model;
use crate::optim::{Adam, AdamParams};
use crate::rng::Rng;
use crate::store::{Ctx, GradStore, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Steps of linear ramp from 0 to `base_lr`; constant afterwards.
    pub warmup_steps: u64,
    pub adam: AdamParams,
    pub seed: u64,
    pub freeze_encoders: bool,
    pub flip_prob: f64,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            base_lr: 5e-5,
            warmup_steps: 0,
            adam: AdamParams::default(),
            seed: 0,
            freeze_encoders: true,
            flip_prob: 0.5,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(CoreError::Config("base_lr must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(CoreError::Config("flip_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr`, then constant. At `step == warmup_steps` the
/// rate is exactly `base_lr`.
pub fn lr_schedule(cfg: &TrainConfig, step: u64) -> f64 {
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.base_lr
    } else {
        cfg.base_lr * step as f64 / cfg.warmup_steps as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub current_lr: f64,
    pub running_loss: f64,
    pub best_val_f1: f64,
    pub rng: Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            step: 0,
            epoch: 0,
            current_lr: lr_schedule(cfg, 0),
            running_loss: 0.0,
            best_val_f1: 0.0,
            rng: Rng::seed_from_u64(cfg.seed),
        }
    }
}

/// One optimization step: augment, forward in train mode, cross-entropy,
/// backward, Adam update at the scheduled rate. Returns the batch loss.
pub fn train_step(
    model: &Model,
    store: &mut ParamStore,
    opt: &mut Adam,
    batch: ImageBatch,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<f64> {
    let batch = augment(batch, &mut state.rng, cfg.flip_prob);
    let labels = batch
        .labels
        .clone()
        .ok_or_else(|| CoreError::Config("training batch has no labels".into()))?;

    let lr = lr_schedule(cfg, state.step);
    let (logits, cache) = {
        let mut ctx = Ctx::Train {
            ps: store,
            rng: &mut state.rng,
        };
        model.forward_logits(&mut ctx, &batch, cfg.freeze_encoders)?
    };
    let (loss, dlogits) = cross_entropy_with_grad(&logits, &labels)?;
    if !loss.is_finite() {
        return Err(CoreError::Numeric(format!(
            "non-finite loss {loss} at step {} (lr {lr})",
            state.step
        )));
    }

    let mut grads = GradStore::new(store);
    model.backward(store, &cache, &dlogits, &mut grads, cfg.freeze_encoders)?;
    if let Some(max_norm) = cfg.grad_clip {
        let norm = grads.global_norm(store);
        if norm > max_norm {
            grads.scale_all(max_norm / norm);
        }
    }
    opt.step(store, &grads, lr);

    state.step += 1;
    state.current_lr = lr_schedule(cfg, state.step);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with(base_lr: f64, warmup: u64) -> TrainConfig {
        TrainConfig {
            base_lr,
            warmup_steps: warmup,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_hits_base_lr_at_warmup_end() {
        let cfg = cfg_with(5e-5, 100);
        assert_eq!(lr_schedule(&cfg, 100), 5e-5);
        assert_eq!(lr_schedule(&cfg, 1000), 5e-5);
    }

    #[test]
    fn schedule_is_linear_during_warmup() {
        let cfg = cfg_with(5e-5, 100);
        assert_eq!(lr_schedule(&cfg, 50), 2.5e-5);
        assert_eq!(lr_schedule(&cfg, 0), 0.0);
    }

    #[test]
    fn zero_warmup_is_constant() {
        let cfg = cfg_with(1e-3, 0);
        for step in [0, 1, 7, 10_000] {
            assert_eq!(lr_schedule(&cfg, step), 1e-3);
        }
    }

    #[test]
    fn default_config_matches_reference_settings() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.base_lr, 5e-5);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn state_tracks_schedule() {
        let cfg = cfg_with(1e-4, 10);
        let state = TrainState::new(&cfg);
        assert_eq!(state.current_lr, lr_schedule(&cfg, state.step));
    }
}
