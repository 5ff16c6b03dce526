//! Bottleneck residual encoder (ResNet-style; He et al. 2015). Four stages
//! of 1x1 -> 3x3 -> 1x1 bottleneck blocks with identity shortcuts, global
//! average pooling to the backbone width, then a linear projection to the
//! feature dimension.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::encoders::EncoderOutput;
use crate::error::{CoreError, Result};
use crate::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm2d, BnCache, Conv2d,
    Conv2dCache, Linear, LinearCache, MaxPool2d, MaxPoolCache,
};
use crate::rng::Rng;
use crate::store::{Ctx, GradStore, ParamStore};
use crate::tensor::Tensor;

const EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetConfig {
    /// Blocks per stage; `[3, 4, 6, 3]` is the 50-layer arrangement.
    pub stage_blocks: [usize; 4],
    /// Width of the first stage; stages use `base, 2b, 4b, 8b` before expansion.
    pub base_width: usize,
    /// Pooled width after the last stage: `8 * base_width * 4`.
    pub backbone_dim: usize,
    /// Feature width after the trailing linear projection.
    pub projection_dim: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            stage_blocks: [3, 4, 6, 3],
            base_width: 64,
            backbone_dim: 2048,
            projection_dim: 512,
        }
    }
}

impl ResNetConfig {
    pub fn output_dim(&self) -> usize {
        self.projection_dim
    }

    /// Channel width after the final stage and global pooling.
    pub fn derived_backbone_dim(&self) -> usize {
        8 * self.base_width * EXPANSION
    }

    pub fn validate(&self) -> Result<()> {
        if self.projection_dim == 0 || self.base_width == 0 {
            return Err(CoreError::Config("resnet: counts must be >= 1".into()));
        }
        if self.stage_blocks.contains(&0) {
            return Err(CoreError::Config(
                "resnet: every stage needs at least one block".into(),
            ));
        }
        if self.backbone_dim != self.derived_backbone_dim() {
            return Err(CoreError::Config(format!(
                "resnet: backbone_dim {} does not match final stage width {}",
                self.backbone_dim,
                self.derived_backbone_dim()
            )));
        }
        Ok(())
    }
}

/// One bottleneck block: 1x1 reduce, 3x3 (with stride), 1x1 expand, plus a
/// projected shortcut when shape changes. The last norm starts at zero so a
/// fresh block is an identity.
#[derive(Debug)]
pub struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug)]
pub struct BottleneckCache {
    conv1: Conv2dCache,
    bn1: BnCache,
    relu1_in: Tensor,
    conv2: Conv2dCache,
    bn2: BnCache,
    relu2_in: Tensor,
    conv3: Conv2dCache,
    bn3: BnCache,
    down: Option<(Conv2dCache, BnCache)>,
    relu_out_in: Tensor,
}

impl Bottleneck {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_c: usize,
        planes: usize,
        stride: usize,
    ) -> Self {
        let out_c = planes * EXPANSION;
        let conv1 = Conv2d::new(ps, rng, &format!("{name}.conv1"), in_c, planes, 1, 1, 0, false);
        let bn1 = BatchNorm2d::new(ps, &format!("{name}.bn1"), planes);
        let conv2 = Conv2d::new(
            ps,
            rng,
            &format!("{name}.conv2"),
            planes,
            planes,
            3,
            stride,
            1,
            false,
        );
        let bn2 = BatchNorm2d::new(ps, &format!("{name}.bn2"), planes);
        let conv3 = Conv2d::new(ps, rng, &format!("{name}.conv3"), planes, out_c, 1, 1, 0, false);
        let bn3 = BatchNorm2d::with_gamma(ps, &format!("{name}.bn3"), out_c, 0.0);
        let down = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2d::new(
                    ps,
                    rng,
                    &format!("{name}.downsample.conv"),
                    in_c,
                    out_c,
                    1,
                    stride,
                    0,
                    false,
                ),
                BatchNorm2d::new(ps, &format!("{name}.downsample.bn"), out_c),
            )
        });
        Bottleneck {
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            down,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Tensor) -> Result<(Tensor, BottleneckCache)> {
        let (c1, conv1) = self.conv1.forward(ctx.ps(), x)?;
        let (n1, bn1) = self.bn1.forward(ctx, &c1)?;
        let (r1, relu1_in) = relu(&n1);
        let (c2, conv2) = self.conv2.forward(ctx.ps(), &r1)?;
        let (n2, bn2) = self.bn2.forward(ctx, &c2)?;
        let (r2, relu2_in) = relu(&n2);
        let (c3, conv3) = self.conv3.forward(ctx.ps(), &r2)?;
        let (n3, bn3) = self.bn3.forward(ctx, &c3)?;

        let (shortcut, down) = match &self.down {
            Some((conv, bn)) => {
                let (s, conv_cache) = conv.forward(ctx.ps(), x)?;
                let (sn, bn_cache) = bn.forward(ctx, &s)?;
                (sn, Some((conv_cache, bn_cache)))
            }
            None => (x.clone(), None),
        };
        let sum = n3.add(&shortcut)?;
        let (out, relu_out_in) = relu(&sum);
        Ok((
            out,
            BottleneckCache {
                conv1,
                bn1,
                relu1_in,
                conv2,
                bn2,
                relu2_in,
                conv3,
                bn3,
                down,
                relu_out_in,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &BottleneckCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let dsum = relu_backward(&cache.relu_out_in, dy);

        // Shortcut path.
        let mut dx = match (&self.down, &cache.down) {
            (Some((conv, bn)), Some((conv_cache, bn_cache))) => {
                let ds = bn.backward(ps, bn_cache, &dsum, gs)?;
                conv.backward(ps, conv_cache, &ds, gs)?
            }
            _ => dsum.clone(),
        };

        // Main path.
        let dn3 = self.bn3.backward(ps, &cache.bn3, &dsum, gs)?;
        let dr2 = self.conv3.backward(ps, &cache.conv3, &dn3, gs)?;
        let dn2 = relu_backward(&cache.relu2_in, &dr2);
        let dc2 = self.bn2.backward(ps, &cache.bn2, &dn2, gs)?;
        let dr1 = self.conv2.backward(ps, &cache.conv2, &dc2, gs)?;
        let dn1 = relu_backward(&cache.relu1_in, &dr1);
        let dc1 = self.bn1.backward(ps, &cache.bn1, &dn1, gs)?;
        dx.add_assign(&self.conv1.backward(ps, &cache.conv1, &dc1, gs)?)?;
        Ok(dx)
    }
}

#[derive(Debug)]
pub struct ResnetEncoder {
    pub cfg: ResNetConfig,
    pub image_size: usize,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stem_pool: MaxPool2d,
    stages: Vec<Vec<Bottleneck>>,
    proj: Linear,
}

#[derive(Debug)]
pub struct ResnetCache {
    stem_conv: Conv2dCache,
    stem_bn: BnCache,
    stem_relu_in: Tensor,
    stem_pool: MaxPoolCache,
    blocks: Vec<BottleneckCache>,
    pooled_shape: Vec<usize>,
    proj: LinearCache,
}

impl ResnetEncoder {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        cfg: ResNetConfig,
        image_size: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if image_size < 32 {
            return Err(CoreError::Config(format!(
                "resnet: image size {image_size} too small for 5 reductions"
            )));
        }
        let base = cfg.base_width;
        let stem_conv = Conv2d::new(ps, rng, "resnet.stem.conv", 3, base, 7, 2, 3, false);
        let stem_bn = BatchNorm2d::new(ps, "resnet.stem.bn", base);
        let stem_pool = MaxPool2d::new(3, 2, 1);

        let mut stages = Vec::new();
        let mut in_c = base;
        for (stage, &blocks) in cfg.stage_blocks.iter().enumerate() {
            let planes = base << stage;
            let stride = if stage == 0 { 1 } else { 2 };
            let mut layer = Vec::new();
            for b in 0..blocks {
                let s = if b == 0 { stride } else { 1 };
                layer.push(Bottleneck::new(
                    ps,
                    rng,
                    &format!("resnet.layer{}.{b}", stage + 1),
                    in_c,
                    planes,
                    s,
                ));
                in_c = planes * EXPANSION;
            }
            stages.push(layer);
        }
        let proj = Linear::new(ps, rng, "resnet.proj", cfg.backbone_dim, cfg.projection_dim);
        Ok(ResnetEncoder {
            cfg,
            image_size,
            stem_conv,
            stem_bn,
            stem_pool,
            stages,
            proj,
        })
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        batch: &ImageBatch,
    ) -> Result<(EncoderOutput, ResnetCache)> {
        if batch.image_size() != self.image_size {
            return Err(CoreError::Config(format!(
                "resnet built for {}px inputs, got {}px",
                self.image_size,
                batch.image_size()
            )));
        }
        let (s, stem_conv) = self.stem_conv.forward(ctx.ps(), &batch.pixels)?;
        let (sn, stem_bn) = self.stem_bn.forward(ctx, &s)?;
        let (sr, stem_relu_in) = relu(&sn);
        let (mut x, stem_pool) = self.stem_pool.forward(&sr)?;

        let mut blocks = Vec::new();
        for stage in &self.stages {
            for block in stage {
                let (next, cache) = block.forward(ctx, &x)?;
                x = next;
                blocks.push(cache);
            }
        }
        let pooled_shape = x.shape().to_vec();
        let pooled = global_avg_pool(&x)?; // [B, backbone_dim]
        debug_assert_eq!(pooled.shape()[1], self.cfg.backbone_dim);
        let (feat, proj) = self.proj.forward(ctx.ps(), &pooled)?;
        let out = EncoderOutput::new(feat, self.cfg.output_dim())?;
        Ok((
            out,
            ResnetCache {
                stem_conv,
                stem_bn,
                stem_relu_in,
                stem_pool,
                blocks,
                pooled_shape,
                proj,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &ResnetCache,
        dfeat: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let dpooled = self.proj.backward(ps, &cache.proj, dfeat, gs)?;
        let mut dx = global_avg_pool_backward(&cache.pooled_shape, &dpooled)?;
        let all_blocks: Vec<&Bottleneck> = self.stages.iter().flatten().collect();
        for (block, bc) in all_blocks.iter().zip(cache.blocks.iter()).rev() {
            dx = block.backward(ps, bc, &dx, gs)?;
        }
        let dsr = self.stem_pool.backward(&cache.stem_pool, &dx)?;
        let dsn = relu_backward(&cache.stem_relu_in, &dsr);
        let ds = self.stem_bn.backward(ps, &cache.stem_bn, &dsn, gs)?;
        self.stem_conv.backward(ps, &cache.stem_conv, &ds, gs)
    }
}
