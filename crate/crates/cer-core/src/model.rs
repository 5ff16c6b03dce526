//! A classification model: one encoder (single-backbone baselines) or all
//! three (the late-fusion ensemble), plus the MLP head.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::encoders::{Encoder, EncoderCache, EncoderKind, EncoderOutput};
use crate::error::{CoreError, Result};
use crate::fusion::{softmax, FusionHead, HeadCache, Probabilities};
use crate::labels::LabelSpace;
use crate::store::{Ctx, GradStore, ParamStore};
use crate::tensor::Tensor;

/// Which backbones a model carries. Serialized into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vit,
    Manet,
    Resnet,
    Ensemble,
}

impl ModelKind {
    pub fn encoder_kinds(&self) -> Vec<EncoderKind> {
        match self {
            ModelKind::Vit => alloc::vec![EncoderKind::Vit],
            ModelKind::Manet => alloc::vec![EncoderKind::Manet],
            ModelKind::Resnet => alloc::vec![EncoderKind::Resnet],
            ModelKind::Ensemble => alloc::vec![
                EncoderKind::Vit,
                EncoderKind::Manet,
                EncoderKind::Resnet
            ],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Vit => "vit",
            ModelKind::Manet => "manet",
            ModelKind::Resnet => "resnet",
            ModelKind::Ensemble => "ensemble",
        }
    }
}

impl core::str::FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vit" => Ok(ModelKind::Vit),
            "manet" => Ok(ModelKind::Manet),
            "resnet" => Ok(ModelKind::Resnet),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(CoreError::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

pub struct Model {
    pub kind: ModelKind,
    pub encoders: Vec<Encoder>,
    pub head: FusionHead,
    pub label_space: LabelSpace,
    pub image_size: usize,
}

pub struct ModelCache {
    encoder_caches: Vec<EncoderCache>,
    encoder_dims: Vec<usize>,
    features: Tensor,
    head: HeadCache,
}

impl Model {
    pub fn new(
        kind: ModelKind,
        encoders: Vec<Encoder>,
        head: FusionHead,
        label_space: LabelSpace,
        image_size: usize,
    ) -> Result<Self> {
        let expected: Vec<EncoderKind> = kind.encoder_kinds();
        let actual: Vec<EncoderKind> = encoders.iter().map(|e| e.kind()).collect();
        if expected != actual {
            return Err(CoreError::Config(format!(
                "model kind {kind:?} expects encoders {expected:?}, got {actual:?}"
            )));
        }
        let dim_sum: usize = encoders.iter().map(|e| e.output_dim()).sum();
        if dim_sum != head.cfg.input_dim {
            return Err(CoreError::Shape(format!(
                "head input dim {} does not match encoder dim sum {dim_sum}",
                head.cfg.input_dim
            )));
        }
        if head.cfg.num_classes != label_space.len() {
            return Err(CoreError::Config(format!(
                "head has {} classes but label space has {}",
                head.cfg.num_classes,
                label_space.len()
            )));
        }
        Ok(Model {
            kind,
            encoders,
            head,
            label_space,
            image_size,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.cfg.num_classes
    }

    /// Encoder forwards, feature concatenation, and the MLP head, to logits.
    /// With `frozen_encoders` the backbones run in eval mode (no dropout, no
    /// running-stat updates) even inside a train context, so their state
    /// stays bit-identical during head-only training.
    pub fn forward_logits(
        &self,
        ctx: &mut Ctx<'_>,
        batch: &ImageBatch,
        frozen_encoders: bool,
    ) -> Result<(Tensor, ModelCache)> {
        let mut outputs: Vec<EncoderOutput> = Vec::with_capacity(self.encoders.len());
        let mut caches = Vec::with_capacity(self.encoders.len());
        for encoder in &self.encoders {
            let (out, cache) = if frozen_encoders && ctx.is_train() {
                let mut eval_ctx = Ctx::Eval { ps: ctx.ps() };
                encoder.forward(&mut eval_ctx, batch)?
            } else {
                encoder.forward(ctx, batch)?
            };
            outputs.push(out);
            caches.push(cache);
        }
        let feature_refs: Vec<&Tensor> = outputs.iter().map(|o| &o.features).collect();
        let features = Tensor::concat_cols(&feature_refs)?;
        let (logits, head) = self.head.forward(ctx, &features)?;
        Ok((
            logits,
            ModelCache {
                encoder_caches: caches,
                encoder_dims: outputs.iter().map(|o| o.dim).collect(),
                features,
                head,
            },
        ))
    }

    /// Inference: probabilities in eval mode.
    pub fn predict(&self, ps: &ParamStore, batch: &ImageBatch) -> Result<Probabilities> {
        let mut ctx = Ctx::Eval { ps };
        let (logits, _) = self.forward_logits(&mut ctx, batch, false)?;
        softmax(&logits)
    }

    /// Backprop from logit gradients. Encoder backward passes are skipped
    /// entirely when frozen.
    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &ModelCache,
        dlogits: &Tensor,
        gs: &mut GradStore,
        frozen_encoders: bool,
    ) -> Result<()> {
        let dfeatures = self.head.backward(ps, &cache.head, dlogits, gs)?;
        if frozen_encoders {
            return Ok(());
        }
        let mut offset = 0;
        for (encoder, (ec, &dim)) in self
            .encoders
            .iter()
            .zip(cache.encoder_caches.iter().zip(&cache.encoder_dims))
        {
            let dfeat = dfeatures.slice_cols(offset, offset + dim)?;
            encoder.backward(ps, ec, &dfeat, gs)?;
            offset += dim;
        }
        Ok(())
    }

    /// Concatenated feature matrix of the last forward (testing hook).
    pub fn cached_features<'c>(&self, cache: &'c ModelCache) -> &'c Tensor {
        &cache.features
    }
}

/// Human-readable summary line, e.g. for CLI startup logging.
pub fn describe(model: &Model, ps: &ParamStore) -> String {
    format!(
        "{} model: {} encoder(s), {} classes, {} parameters",
        model.kind.as_str(),
        model.encoders.len(),
        model.num_classes(),
        ps.total_values()
    )
}
