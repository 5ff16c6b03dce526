//! Multi-scale + local-attention encoder (MANet-style; Zhao et al. 2021).
//! A convolutional stem yields a mid-level map; one branch fuses several
//! receptive-field sizes into a vector, the other softmax-gates spatial
//! regions and pools them; the two 512-dim branch features are scaled by
//! softmaxed learnable weights and concatenated.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::encoders::EncoderOutput;
use crate::error::{CoreError, Result};
use crate::fmath;
use crate::layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, global_avg_pool, global_avg_pool_backward,
    relu, relu_backward, softmax_rows, softmax_rows_backward, BatchNorm2d, BnCache, Conv2d,
    Conv2dCache, Linear, LinearCache, MaxPool2d, MaxPoolCache,
};
use crate::rng::Rng;
use crate::store::{Ctx, GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MANetConfig {
    pub stem_channels: usize,
    /// Output width of each branch; the encoder emits `2 * branch_dim`.
    pub branch_dim: usize,
    /// Kernel sizes of the multi-scale branch (odd, so padding preserves size).
    pub scales: Vec<usize>,
    /// Number of gated regions in the local-attention branch (perfect square).
    pub attention_regions: usize,
    /// Initial values of the learnable branch weights `(w_ms, w_la)`.
    pub branch_weight_init: [f64; 2],
}

impl Default for MANetConfig {
    fn default() -> Self {
        MANetConfig {
            stem_channels: 64,
            branch_dim: 512,
            scales: vec![3, 5, 7],
            attention_regions: 16,
            branch_weight_init: [0.0, 0.0],
        }
    }
}

impl MANetConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.branch_dim
    }

    fn grid(&self) -> usize {
        let mut g = 1;
        while (g + 1) * (g + 1) <= self.attention_regions {
            g += 1;
        }
        g
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.branch_dim == 0 || self.stem_channels == 0 {
            return Err(CoreError::Config("manet: counts must be >= 1".into()));
        }
        if self.scales.is_empty() {
            return Err(CoreError::Config("manet: scales must be non-empty".into()));
        }
        for &s in &self.scales {
            if s == 0 || s % 2 == 0 {
                return Err(CoreError::Config(format!(
                    "manet: scale kernels must be odd, got {s}"
                )));
            }
        }
        let g = self.grid();
        if g * g != self.attention_regions {
            return Err(CoreError::Config(format!(
                "manet: attention_regions must be a perfect square, got {}",
                self.attention_regions
            )));
        }
        let cells = image_size / 4; // stem reduces spatial size by 4
        if g > cells {
            return Err(CoreError::Config(format!(
                "manet: {} attention regions exceed the {cells}x{cells} stem map",
                self.attention_regions
            )));
        }
        Ok(())
    }
}

/// Region-gated pooling: partition the map into a grid, score each region
/// vector with a learned gate, softmax the scores, and sum the reweighted
/// regions into one vector.
#[derive(Debug)]
pub struct LocalAttention {
    pub gate: Linear,
    pub proj: Linear,
    pub regions: usize,
    grid: usize,
    channels: usize,
}

#[derive(Debug)]
pub struct LocalAttnCache {
    map_shape: Vec<usize>,
    tokens: Tensor,
    gate_cache: LinearCache,
    /// Softmaxed region weights `[B, R]`; rows sum to 1.
    pub alpha: Tensor,
    proj_cache: LinearCache,
}

impl LocalAttention {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        channels: usize,
        regions: usize,
        out_dim: usize,
    ) -> Self {
        let mut grid = 1;
        while (grid + 1) * (grid + 1) <= regions {
            grid += 1;
        }
        debug_assert_eq!(grid * grid, regions, "regions must be a perfect square");
        LocalAttention {
            gate: Linear::new(ps, rng, &format!("{name}.gate"), channels, 1),
            proj: Linear::new(ps, rng, &format!("{name}.proj"), channels, out_dim),
            regions,
            grid,
            channels,
        }
    }

    pub fn forward(&self, ps: &ParamStore, map: &Tensor) -> Result<(Tensor, LocalAttnCache)> {
        let (bsz, c, _h, _w) = map.dims4()?;
        let pooled = adaptive_avg_pool(map, self.grid)?; // [B, C, g, g]
        // Re-layout into region tokens [B, R, C].
        let r = self.regions;
        let mut tokens = vec![0.0; bsz * r * c];
        let pd = pooled.data();
        for b in 0..bsz {
            for ch in 0..c {
                for reg in 0..r {
                    tokens[(b * r + reg) * c + ch] = pd[(b * c + ch) * r + reg];
                }
            }
        }
        let tokens = Tensor::new(&[bsz, r, c], tokens)?;
        let (scores, gate_cache) = self.gate.forward(ps, &tokens)?; // [B, R, 1]
        let scores2 = scores.reshape(&[bsz, r])?;
        let alpha = softmax_rows(&scores2);

        // Weighted sum of region vectors.
        let mut fused = vec![0.0; bsz * c];
        for b in 0..bsz {
            for reg in 0..r {
                let a = alpha.data()[b * r + reg];
                let tok = &tokens.data()[(b * r + reg) * c..(b * r + reg + 1) * c];
                for ch in 0..c {
                    fused[b * c + ch] += a * tok[ch];
                }
            }
        }
        let fused = Tensor::new(&[bsz, c], fused)?;
        let (out, proj_cache) = self.proj.forward(ps, &fused)?;
        Ok((
            out,
            LocalAttnCache {
                map_shape: map.shape().to_vec(),
                tokens,
                gate_cache,
                alpha,
                proj_cache,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &LocalAttnCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let bsz = cache.map_shape[0];
        let c = self.channels;
        let r = self.regions;
        let dfused = self.proj.backward(ps, &cache.proj_cache, dy, gs)?;

        // fused = sum_r alpha_r * token_r
        let mut dalpha = vec![0.0; bsz * r];
        let mut dtokens = vec![0.0; bsz * r * c];
        for b in 0..bsz {
            for reg in 0..r {
                let tok = &cache.tokens.data()[(b * r + reg) * c..(b * r + reg + 1) * c];
                let df = &dfused.data()[b * c..(b + 1) * c];
                let a = cache.alpha.data()[b * r + reg];
                let mut dot = 0.0;
                for ch in 0..c {
                    dot += df[ch] * tok[ch];
                    dtokens[(b * r + reg) * c + ch] += a * df[ch];
                }
                dalpha[b * r + reg] = dot;
            }
        }
        let dscores = softmax_rows_backward(&cache.alpha, &Tensor::new(&[bsz, r], dalpha)?);
        let dscores3 = dscores.reshape(&[bsz, r, 1])?;
        let dtokens_gate = self.gate.backward(ps, &cache.gate_cache, &dscores3, gs)?;
        let mut dtokens = Tensor::new(&[bsz, r, c], dtokens)?;
        dtokens.add_assign(&dtokens_gate)?;

        // Back to the pooled grid layout, then through the adaptive pool.
        let g = self.grid;
        let mut dpooled = vec![0.0; bsz * c * r];
        for b in 0..bsz {
            for ch in 0..c {
                for reg in 0..r {
                    dpooled[(b * c + ch) * r + reg] = dtokens.data()[(b * r + reg) * c + ch];
                }
            }
        }
        let dpooled = Tensor::new(&[bsz, c, g, g], dpooled)?;
        adaptive_avg_pool_backward(&cache.map_shape, g, &dpooled)
    }
}

#[derive(Debug)]
pub struct ManetEncoder {
    pub cfg: MANetConfig,
    pub image_size: usize,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    pool: MaxPool2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    scale_convs: Vec<Conv2d>,
    scale_bns: Vec<BatchNorm2d>,
    ms_proj: Linear,
    pub local_attn: LocalAttention,
    w_ms: ParamId,
    w_la: ParamId,
    mid_channels: usize,
}

#[derive(Debug)]
pub struct ManetCache {
    conv1: Conv2dCache,
    bn1: BnCache,
    relu1_in: Tensor,
    pool: MaxPoolCache,
    conv2: Conv2dCache,
    bn2: BnCache,
    relu2_in: Tensor,
    scale_caches: Vec<(Conv2dCache, BnCache, Tensor, Vec<usize>)>,
    ms_cat: LinearCache,
    la: LocalAttnCache,
    f_ms: Tensor,
    f_la: Tensor,
    branch_scales: [f64; 2],
}

impl ManetEncoder {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        cfg: MANetConfig,
        image_size: usize,
    ) -> Result<Self> {
        cfg.validate(image_size)?;
        let stem = cfg.stem_channels;
        let mid = 2 * stem;
        let conv1 = Conv2d::new(ps, rng, "manet.stem.conv1", 3, stem, 7, 2, 3, false);
        let bn1 = BatchNorm2d::new(ps, "manet.stem.bn1", stem);
        let pool = MaxPool2d::new(3, 2, 1);
        let conv2 = Conv2d::new(ps, rng, "manet.stem.conv2", stem, mid, 3, 1, 1, false);
        let bn2 = BatchNorm2d::new(ps, "manet.stem.bn2", mid);
        let mut scale_convs = Vec::new();
        let mut scale_bns = Vec::new();
        for (i, &k) in cfg.scales.iter().enumerate() {
            scale_convs.push(Conv2d::new(
                ps,
                rng,
                &format!("manet.ms.convs.{i}"),
                mid,
                mid,
                k,
                1,
                (k - 1) / 2,
                false,
            ));
            scale_bns.push(BatchNorm2d::new(ps, &format!("manet.ms.bns.{i}"), mid));
        }
        let ms_proj = Linear::new(
            ps,
            rng,
            "manet.ms.proj",
            mid * cfg.scales.len(),
            cfg.branch_dim,
        );
        let local_attn = LocalAttention::new(
            ps,
            rng,
            "manet.la",
            mid,
            cfg.attention_regions,
            cfg.branch_dim,
        );
        let w_ms = ps.register("manet.w_ms", Tensor::scalar(cfg.branch_weight_init[0]));
        let w_la = ps.register("manet.w_la", Tensor::scalar(cfg.branch_weight_init[1]));
        Ok(ManetEncoder {
            cfg,
            image_size,
            conv1,
            bn1,
            pool,
            conv2,
            bn2,
            scale_convs,
            scale_bns,
            ms_proj,
            local_attn,
            w_ms,
            w_la,
            mid_channels: mid,
        })
    }

    /// Softmaxed branch weights `(a_ms, a_la)`; equal raw weights give 0.5 each.
    pub fn branch_scales(&self, ps: &ParamStore) -> [f64; 2] {
        let w0 = ps.get(self.w_ms).data()[0];
        let w1 = ps.get(self.w_la).data()[0];
        let m = fmath::max(w0, w1);
        let e0 = fmath::exp(w0 - m);
        let e1 = fmath::exp(w1 - m);
        [e0 / (e0 + e1), e1 / (e0 + e1)]
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        batch: &ImageBatch,
    ) -> Result<(EncoderOutput, ManetCache)> {
        if batch.image_size() != self.image_size {
            return Err(CoreError::Config(format!(
                "manet built for {}px inputs, got {}px",
                self.image_size,
                batch.image_size()
            )));
        }
        let (x1, conv1) = self.conv1.forward(ctx.ps(), &batch.pixels)?;
        let (x1n, bn1) = self.bn1.forward(ctx, &x1)?;
        let (x1r, relu1_in) = relu(&x1n);
        let (x1p, pool) = self.pool.forward(&x1r)?;
        let (x2, conv2) = self.conv2.forward(ctx.ps(), &x1p)?;
        let (x2n, bn2) = self.bn2.forward(ctx, &x2)?;
        let (map, relu2_in) = relu(&x2n);

        // Multi-scale branch.
        let mut pooled_parts: Vec<Tensor> = Vec::new();
        let mut scale_caches = Vec::new();
        for (conv, bn) in self.scale_convs.iter().zip(&self.scale_bns) {
            let (c, conv_cache) = conv.forward(ctx.ps(), &map)?;
            let (n, bn_cache) = bn.forward(ctx, &c)?;
            let (a, relu_in) = relu(&n);
            pooled_parts.push(global_avg_pool(&a)?);
            scale_caches.push((conv_cache, bn_cache, relu_in, a.shape().to_vec()));
        }
        let refs: Vec<&Tensor> = pooled_parts.iter().collect();
        let cat = Tensor::concat_cols(&refs)?;
        let (f_ms, ms_cat) = self.ms_proj.forward(ctx.ps(), &cat)?;

        // Local-attention branch.
        let (f_la, la) = self.local_attn.forward(ctx.ps(), &map)?;

        let scales = self.branch_scales(ctx.ps());
        let scaled_ms = f_ms.clone().scale(scales[0]);
        let scaled_la = f_la.clone().scale(scales[1]);
        let features = Tensor::concat_cols(&[&scaled_ms, &scaled_la])?;
        let out = EncoderOutput::new(features, self.cfg.output_dim())?;
        Ok((
            out,
            ManetCache {
                conv1,
                bn1,
                relu1_in,
                pool,
                conv2,
                bn2,
                relu2_in,
                scale_caches,
                ms_cat,
                la,
                f_ms,
                f_la,
                branch_scales: scales,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &ManetCache,
        dfeat: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let d = self.cfg.branch_dim;
        let dscaled_ms = dfeat.slice_cols(0, d)?;
        let dscaled_la = dfeat.slice_cols(d, 2 * d)?;
        let [a_ms, a_la] = cache.branch_scales;

        // Branch-weight gradients through the two-way softmax.
        let dot_ms: f64 = dscaled_ms
            .data()
            .iter()
            .zip(cache.f_ms.data())
            .map(|(g, f)| g * f)
            .sum();
        let dot_la: f64 = dscaled_la
            .data()
            .iter()
            .zip(cache.f_la.data())
            .map(|(g, f)| g * f)
            .sum();
        // d(softmax)/dw for two logits.
        let da_dw = a_ms * a_la;
        gs.accumulate(self.w_ms, Tensor::scalar(dot_ms * da_dw - dot_la * da_dw));
        gs.accumulate(self.w_la, Tensor::scalar(dot_la * da_dw - dot_ms * da_dw));

        let df_ms = dscaled_ms.scale(a_ms);
        let df_la = dscaled_la.scale(a_la);

        // Local-attention branch.
        let mut dmap = self.local_attn.backward(ps, &cache.la, &df_la, gs)?;

        // Multi-scale branch.
        let dcat = self.ms_proj.backward(ps, &cache.ms_cat, &df_ms, gs)?;
        let mid = self.mid_channels;
        for (i, ((conv, bn), (conv_cache, bn_cache, relu_in, act_shape))) in self
            .scale_convs
            .iter()
            .zip(&self.scale_bns)
            .zip(&cache.scale_caches)
            .enumerate()
        {
            let dpooled = dcat.slice_cols(i * mid, (i + 1) * mid)?;
            let dact = global_avg_pool_backward(act_shape, &dpooled)?;
            let dn = relu_backward(relu_in, &dact);
            let dc = bn.backward(ps, bn_cache, &dn, gs)?;
            dmap.add_assign(&conv.backward(ps, conv_cache, &dc, gs)?)?;
        }

        // Stem.
        let dx2n = relu_backward(&cache.relu2_in, &dmap);
        let dx2 = self.bn2.backward(ps, &cache.bn2, &dx2n, gs)?;
        let dx1p = self.conv2.backward(ps, &cache.conv2, &dx2, gs)?;
        let dx1r = self.pool.backward(&cache.pool, &dx1p)?;
        let dx1n = relu_backward(&cache.relu1_in, &dx1r);
        let dx1 = self.bn1.backward(ps, &cache.bn1, &dx1n, gs)?;
        self.conv1.backward(ps, &cache.conv1, &dx1, gs)
    }
}
