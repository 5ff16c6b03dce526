//! Flat key=value pipeline configuration with a fixed precedence chain:
//! built-in defaults, then the config file, then `CER_*` environment
//! variables, then command-line flags.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Normalization;

pub const ENV_PREFIX: &str = "CER_";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Input resolution; `None` falls back to the preset's size (224 full, 64 toy).
    pub image_size: Option<usize>,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub flip_prob: f64,
    pub epochs: usize,
    pub base_lr: f64,
    /// Warmup length as a fraction of total optimization steps.
    pub warmup_frac: f64,
    pub freeze_encoders: bool,
    /// Fusion-MLP hidden widths; `None` falls back to the preset.
    pub hidden_dims: Option<Vec<usize>>,
    /// Fusion-MLP dropout; `None` falls back to the preset.
    pub dropout: Option<f64>,
    pub grad_clip: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            image_size: None,
            batch_size: 128,
            val_fraction: 0.023,
            seed: 0,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            flip_prob: 0.5,
            epochs: 100,
            base_lr: 5e-5,
            warmup_frac: 0.05,
            freeze_encoders: true,
            hidden_dims: None,
            dropout: None,
            grad_clip: None,
        }
    }
}

const KEYS: &[&str] = &[
    "image_size",
    "batch_size",
    "val_fraction",
    "seed",
    "mean",
    "std",
    "flip_prob",
    "epochs",
    "base_lr",
    "warmup_frac",
    "freeze_encoders",
    "hidden_dims",
    "dropout",
    "grad_clip",
];

impl PipelineConfig {
    /// Defaults, file, then environment, with every problem reported at once.
    pub fn resolve(file: Option<&Path>) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut problems = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                match line.split_once('=') {
                    Some((key, value)) => {
                        if let Err(msg) = cfg.set(key.trim(), value.trim()) {
                            problems.push(format!("{}:{}: {msg}", path.display(), lineno + 1));
                        }
                    }
                    None => problems.push(format!(
                        "{}:{}: expected key=value, got '{line}'",
                        path.display(),
                        lineno + 1
                    )),
                }
            }
        }
        for &key in KEYS {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                if let Err(msg) = cfg.set(key, &value) {
                    problems.push(format!("environment {var}: {msg}"));
                }
            }
        }
        if let Err(msgs) = cfg.validate() {
            problems.extend(msgs);
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            let mut combined = String::from("invalid configuration:");
            for p in &problems {
                let _ = write!(combined, "\n  - {p}");
            }
            Err(Error::Config(combined))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("cannot parse '{value}' for key '{key}'"))
        }
        fn triple(key: &str, value: &str) -> std::result::Result<[f64; 3], String> {
            let parts: Vec<&str> = value.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(format!("key '{key}' wants three comma-separated values"));
            }
            let mut out = [0.0; 3];
            for (o, p) in out.iter_mut().zip(&parts) {
                *o = parse(key, p)?;
            }
            Ok(out)
        }
        match key {
            "image_size" => self.image_size = Some(parse(key, value)?),
            "batch_size" => self.batch_size = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mean" => self.mean = triple(key, value)?,
            "std" => self.std = triple(key, value)?,
            "flip_prob" => self.flip_prob = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "warmup_frac" => self.warmup_frac = parse(key, value)?,
            "freeze_encoders" => self.freeze_encoders = parse(key, value)?,
            "hidden_dims" => {
                let dims: std::result::Result<Vec<usize>, String> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect();
                self.hidden_dims = Some(dims?);
            }
            "dropout" => self.dropout = Some(parse(key, value)?),
            "grad_clip" => self.grad_clip = Some(parse(key, value)?),
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".into());
        }
        if self.base_lr <= 0.0 {
            problems.push("base_lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            problems.push("val_fraction must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            problems.push("flip_prob must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            problems.push("warmup_frac must be in [0, 1]".into());
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            problems.push("std components must be positive".into());
        }
        if let Some(d) = self.dropout {
            if !(0.0..1.0).contains(&d) {
                problems.push("dropout must be in [0, 1)".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            mean: self.mean,
            std: self.std,
        }
    }

    /// Stable digest of the resolved configuration, used in run directory names.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = format!("{self:?}");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }
}
