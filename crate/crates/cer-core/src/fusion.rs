//! Late fusion: the three encoder feature matrices are concatenated in a
//! fixed order (ViT, MANet, ResNet) and classified by an MLP whose softmax
//! output is the model's probability estimate.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderOutput;
use crate::error::{CoreError, Result};
use crate::labels::LabelSpace;
use crate::layers::{gelu, gelu_backward, softmax_rows, Dropout, DropoutCache, Linear, LinearCache};
use crate::rng::Rng;
use crate::store::{Ctx, GradStore, ParamStore};
use crate::tensor::Tensor;

/// Architecture of the classifier head; the parameters live in a store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHeadConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl FusionHeadConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize, dropout_rate: f64) -> Self {
        FusionHeadConfig {
            input_dim,
            hidden_dims,
            num_classes,
            dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(CoreError::Config("head: dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::Config(format!(
                "head: dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(CoreError::Config("head: hidden dims must be >= 1".into()));
        }
        Ok(())
    }
}

/// MLP over (concatenated) features: per hidden layer linear -> GELU ->
/// dropout, then a final linear to class logits.
#[derive(Debug)]
pub struct FusionHead {
    pub cfg: FusionHeadConfig,
    hidden: Vec<Linear>,
    dropout: Dropout,
    out: Linear,
}

#[derive(Debug)]
pub struct HeadCache {
    layers: Vec<(LinearCache, Tensor, DropoutCache)>,
    out: LinearCache,
}

impl FusionHead {
    pub fn new(ps: &mut ParamStore, rng: &mut Rng, cfg: FusionHeadConfig) -> Result<Self> {
        cfg.validate()?;
        let mut hidden = Vec::new();
        let mut in_dim = cfg.input_dim;
        for (i, &h) in cfg.hidden_dims.iter().enumerate() {
            hidden.push(Linear::new(ps, rng, &format!("head.fc{i}"), in_dim, h));
            in_dim = h;
        }
        let out = Linear::new(ps, rng, "head.out", in_dim, cfg.num_classes);
        Ok(FusionHead {
            dropout: Dropout::new(cfg.dropout_rate),
            cfg,
            hidden,
            out,
        })
    }

    /// Features `[B, input_dim]` to logits `[B, num_classes]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, features: &Tensor) -> Result<(Tensor, HeadCache)> {
        let (_, d) = features.dims2()?;
        if d != self.cfg.input_dim {
            return Err(CoreError::Shape(format!(
                "head expects {}-dim features, got {d}",
                self.cfg.input_dim
            )));
        }
        let mut x = features.clone();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for lin in &self.hidden {
            let (h, lin_cache) = lin.forward(ctx.ps(), &x)?;
            let (g, gelu_in) = gelu(&h);
            let (dropped, drop_cache) = self.dropout.forward(ctx, &g)?;
            x = dropped;
            layers.push((lin_cache, gelu_in, drop_cache));
        }
        let (logits, out) = self.out.forward(ctx.ps(), &x)?;
        Ok((logits, HeadCache { layers, out }))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &HeadCache,
        dlogits: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let mut dx = self.out.backward(ps, &cache.out, dlogits, gs)?;
        for (lin, (lin_cache, gelu_in, drop_cache)) in
            self.hidden.iter().zip(cache.layers.iter()).rev()
        {
            let dg = self.dropout.backward(drop_cache, &dx)?;
            let dh = gelu_backward(gelu_in, &dg);
            dx = lin.backward(ps, lin_cache, &dh, gs)?;
        }
        Ok(dx)
    }
}

/// Row-stochastic class probabilities, `[B, num_classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    values: Tensor,
}

impl Probabilities {
    pub fn from_rows(values: Tensor) -> Result<Self> {
        let (rows, _) = values.dims2()?;
        for r in 0..rows {
            let row = values.row(r);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(CoreError::Numeric(format!(
                    "row {r} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(Probabilities { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }
}

/// Row-wise concatenation in the fixed (ViT, MANet, ResNet) order.
pub fn concat_features(
    f1: &EncoderOutput,
    f2: &EncoderOutput,
    f3: &EncoderOutput,
) -> Result<Tensor> {
    let b = f1.batch_size();
    if f2.batch_size() != b || f3.batch_size() != b {
        return Err(CoreError::Shape(format!(
            "batch sizes differ: {b}, {}, {}",
            f2.batch_size(),
            f3.batch_size()
        )));
    }
    Tensor::concat_cols(&[&f1.features, &f2.features, &f3.features])
}

/// Numerically stable row softmax over finite logits.
pub fn softmax(logits: &Tensor) -> Result<Probabilities> {
    if !logits.all_finite() {
        return Err(CoreError::Numeric("softmax over non-finite logits".into()));
    }
    logits.dims2()?;
    Probabilities::from_rows(softmax_rows(logits))
}

/// Per-row argmax with ties broken toward the lowest index.
pub fn predict_labels(
    probs: &Probabilities,
    label_space: &LabelSpace,
) -> Result<Vec<(usize, String, f64)>> {
    if probs.num_classes() != label_space.len() {
        return Err(CoreError::Shape(format!(
            "{} classes vs {} labels",
            probs.num_classes(),
            label_space.len()
        )));
    }
    let mut out = Vec::with_capacity(probs.batch_size());
    for r in 0..probs.batch_size() {
        let row = probs.row(r);
        let mut best = 0usize;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        out.push((best, label_space.name(best)?.into(), row[best]));
    }
    Ok(out)
}
