//! The three feature extractors: a patch transformer, a multi-scale +
//! local-attention network, and a bottleneck residual network. Each maps an
//! image batch to a `[B, D]` feature matrix with `D` fixed by its config.

mod manet;
mod resnet;
mod vit;

pub use manet::{LocalAttention, LocalAttnCache, MANetConfig, ManetCache, ManetEncoder};
pub use resnet::{Bottleneck, BottleneckCache, ResNetConfig, ResnetCache, ResnetEncoder};
pub use vit::{TransformerBlock, TransformerBlockCache, ViTCache, ViTConfig, ViTEncoder};

use alloc::format;

use crate::batch::ImageBatch;
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::store::{Ctx, GradStore, ParamStore};
use crate::tensor::Tensor;

/// A batch of per-image feature vectors, `[B, dim]`, guaranteed finite.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub features: Tensor,
    pub dim: usize,
}

impl EncoderOutput {
    pub fn new(features: Tensor, dim: usize) -> Result<Self> {
        let (_, d) = features.dims2()?;
        if d != dim {
            return Err(CoreError::Shape(format!(
                "encoder declared dim {dim} but produced {d}"
            )));
        }
        if !features.all_finite() {
            return Err(CoreError::Numeric(
                "encoder produced non-finite activations".into(),
            ));
        }
        Ok(EncoderOutput { features, dim })
    }

    pub fn batch_size(&self) -> usize {
        self.features.shape()[0]
    }
}

/// Which backbone an encoder is. Also fixes the concatenation order of the
/// ensemble: ViT, then MANet, then ResNet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Vit,
    Manet,
    Resnet,
}

impl EncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::Vit => "vit",
            EncoderKind::Manet => "manet",
            EncoderKind::Resnet => "resnet",
        }
    }
}

/// Type-erased encoder so models can hold one or all three backbones.
#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Encoder {
    Vit(ViTEncoder),
    Manet(ManetEncoder),
    Resnet(ResnetEncoder),
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum EncoderCache {
    Vit(ViTCache),
    Manet(ManetCache),
    Resnet(ResnetCache),
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Vit(_) => EncoderKind::Vit,
            Encoder::Manet(_) => EncoderKind::Manet,
            Encoder::Resnet(_) => EncoderKind::Resnet,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Vit(e) => e.cfg.output_dim(),
            Encoder::Manet(e) => e.cfg.output_dim(),
            Encoder::Resnet(e) => e.cfg.output_dim(),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, batch: &ImageBatch) -> Result<(EncoderOutput, EncoderCache)> {
        match self {
            Encoder::Vit(e) => {
                let (out, cache) = e.forward(ctx, batch)?;
                Ok((out, EncoderCache::Vit(cache)))
            }
            Encoder::Manet(e) => {
                let (out, cache) = e.forward(ctx, batch)?;
                Ok((out, EncoderCache::Manet(cache)))
            }
            Encoder::Resnet(e) => {
                let (out, cache) = e.forward(ctx, batch)?;
                Ok((out, EncoderCache::Resnet(cache)))
            }
        }
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &EncoderCache,
        dfeatures: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        match (self, cache) {
            (Encoder::Vit(e), EncoderCache::Vit(c)) => e.backward(ps, c, dfeatures, gs),
            (Encoder::Manet(e), EncoderCache::Manet(c)) => e.backward(ps, c, dfeatures, gs),
            (Encoder::Resnet(e), EncoderCache::Resnet(c)) => e.backward(ps, c, dfeatures, gs),
            _ => Err(CoreError::Shape("encoder/cache kind mismatch".into())),
        }
    }
}

/// Construct an encoder of the given kind for a fixed input image size.
pub fn build_encoder(
    kind: EncoderKind,
    ps: &mut ParamStore,
    rng: &mut Rng,
    image_size: usize,
    vit: &ViTConfig,
    manet: &MANetConfig,
    resnet: &ResNetConfig,
) -> Result<Encoder> {
    Ok(match kind {
        EncoderKind::Vit => Encoder::Vit(ViTEncoder::new(ps, rng, vit.clone(), image_size)?),
        EncoderKind::Manet => Encoder::Manet(ManetEncoder::new(ps, rng, manet.clone(), image_size)?),
        EncoderKind::Resnet => Encoder::Resnet(ResnetEncoder::new(ps, rng, resnet.clone(), image_size)?),
    })
}
