//! Patch-based transformer encoder (ViT-style; Dosovitskiy et al. 2020).
//! Images are cut into non-overlapping patches, linearly embedded, given a
//! learned positional code, run through pre-norm transformer blocks, and
//! mean-pooled over patch tokens into one vector per image.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::encoders::EncoderOutput;
use crate::error::{CoreError, Result};
use crate::layers::{
    gelu, gelu_backward, AttnCache, LayerNorm, LayerNormCache, Linear, LinearCache,
    MultiHeadSelfAttention,
};
use crate::rng::Rng;
use crate::store::{init, Ctx, GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
}

impl Default for ViTConfig {
    /// Base-scale defaults: 16x16 patches, 768-dim embeddings, 12 blocks.
    fn default() -> Self {
        ViTConfig {
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            mlp_ratio: 4.0,
        }
    }
}

impl ViTConfig {
    pub fn output_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio) as usize
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.patch_size == 0 || self.embed_dim == 0 || self.depth == 0 || self.num_heads == 0 {
            return Err(CoreError::Config("vit: all counts must be >= 1".into()));
        }
        if image_size % self.patch_size != 0 {
            return Err(CoreError::Config(format!(
                "vit: image size {image_size} not divisible by patch size {}",
                self.patch_size
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(CoreError::Config(format!(
                "vit: embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(CoreError::Config("vit: mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// One pre-norm encoder block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadSelfAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug)]
pub struct TransformerBlockCache {
    ln1: LayerNormCache,
    pub attn: AttnCache,
    ln2: LayerNormCache,
    fc1: LinearCache,
    gelu_in: Tensor,
    fc2: LinearCache,
}

impl TransformerBlock {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        embed_dim: usize,
        num_heads: usize,
        hidden: usize,
    ) -> Self {
        TransformerBlock {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), embed_dim),
            attn: MultiHeadSelfAttention::new(ps, rng, &format!("{name}.attn"), embed_dim, num_heads),
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), embed_dim),
            fc1: Linear::new(ps, rng, &format!("{name}.mlp.fc1"), embed_dim, hidden),
            fc2: Linear::new(ps, rng, &format!("{name}.mlp.fc2"), hidden, embed_dim),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, TransformerBlockCache)> {
        let (a, ln1) = self.norm1.forward(ps, x)?;
        let (attn_out, attn) = self.attn.forward(ps, &a)?;
        let x1 = x.add(&attn_out)?;

        let (m, ln2) = self.norm2.forward(ps, &x1)?;
        let (h, fc1) = self.fc1.forward(ps, &m)?;
        let (g, gelu_in) = gelu(&h);
        let (o, fc2) = self.fc2.forward(ps, &g)?;
        let x2 = x1.add(&o)?;

        Ok((
            x2,
            TransformerBlockCache {
                ln1,
                attn,
                ln2,
                fc1,
                gelu_in,
                fc2,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &TransformerBlockCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        // MLP half: dy reaches both the residual line and the MLP path.
        let dg = self.fc2.backward(ps, &cache.fc2, dy, gs)?;
        let dh = gelu_backward(&cache.gelu_in, &dg);
        let dm = self.fc1.backward(ps, &cache.fc1, &dh, gs)?;
        let mut dx1 = self.norm2.backward(ps, &cache.ln2, &dm, gs)?;
        dx1.add_assign(dy)?;

        // Attention half.
        let da = self.attn.backward(ps, &cache.attn, &dx1, gs)?;
        let mut dx = self.norm1.backward(ps, &cache.ln1, &da, gs)?;
        dx.add_assign(&dx1)?;
        Ok(dx)
    }
}

#[derive(Debug)]
pub struct ViTEncoder {
    pub cfg: ViTConfig,
    pub image_size: usize,
    pub num_tokens: usize,
    patch_dim: usize,
    patch_embed: Linear,
    pos_embed: ParamId,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
}

#[derive(Debug)]
pub struct ViTCache {
    patches: LinearCache,
    pub blocks: Vec<TransformerBlockCache>,
    final_ln: LayerNormCache,
    batch: usize,
}

impl ViTEncoder {
    pub fn new(ps: &mut ParamStore, rng: &mut Rng, cfg: ViTConfig, image_size: usize) -> Result<Self> {
        cfg.validate(image_size)?;
        let grid = image_size / cfg.patch_size;
        let num_tokens = grid * grid;
        let patch_dim = 3 * cfg.patch_size * cfg.patch_size;
        let patch_embed = Linear::new(ps, rng, "vit.patch_embed", patch_dim, cfg.embed_dim);
        let pos_embed = ps.register(
            "vit.pos_embed",
            init::trunc_normal(rng, &[num_tokens, cfg.embed_dim], 0.02),
        );
        let hidden = cfg.mlp_hidden();
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::new(
                    ps,
                    rng,
                    &format!("vit.blocks.{i}"),
                    cfg.embed_dim,
                    cfg.num_heads,
                    hidden,
                )
            })
            .collect();
        let norm = LayerNorm::new(ps, "vit.norm", cfg.embed_dim);
        Ok(ViTEncoder {
            cfg,
            image_size,
            num_tokens,
            patch_dim,
            patch_embed,
            pos_embed,
            blocks,
            norm,
        })
    }

    /// `[B, 3, S, S] -> [B, N, 3*p*p]`, token order row-major over the grid.
    fn patchify(&self, pixels: &Tensor) -> Result<Tensor> {
        let (bsz, c, h, w) = pixels.dims4()?;
        let p = self.cfg.patch_size;
        let grid = h / p;
        let mut out = vec![0.0; bsz * self.num_tokens * self.patch_dim];
        let src = pixels.data();
        for b in 0..bsz {
            for gy in 0..grid {
                for gx in 0..grid {
                    let token = gy * grid + gx;
                    let dst_base = (b * self.num_tokens + token) * self.patch_dim;
                    for ch in 0..c {
                        for py in 0..p {
                            let src_row = ((b * c + ch) * h + gy * p + py) * w + gx * p;
                            let dst_row = dst_base + (ch * p + py) * p;
                            out[dst_row..dst_row + p]
                                .copy_from_slice(&src[src_row..src_row + p]);
                        }
                    }
                }
            }
        }
        Tensor::new(&[bsz, self.num_tokens, self.patch_dim], out)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, batch: &ImageBatch) -> Result<(EncoderOutput, ViTCache)> {
        let size = batch.image_size();
        if size != self.image_size {
            return Err(CoreError::Config(format!(
                "vit built for {}px inputs, got {size}px",
                self.image_size
            )));
        }
        let ps = ctx.ps();
        let bsz = batch.batch_size();
        let tokens = self.patchify(&batch.pixels)?;
        let (mut x, patches) = self.patch_embed.forward(ps, &tokens)?;
        {
            // Learned positional code, shared across the batch.
            let pos = ps.get(self.pos_embed).data();
            let e = self.cfg.embed_dim;
            let xd = x.data_mut();
            for b in 0..bsz {
                for t in 0..self.num_tokens {
                    let base = (b * self.num_tokens + t) * e;
                    for j in 0..e {
                        xd[base + j] += pos[t * e + j];
                    }
                }
            }
        }
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(ps, &x)?;
            x = next;
            block_caches.push(cache);
        }
        let (xn, final_ln) = self.norm.forward(ps, &x)?;

        // Mean-pool over patch tokens.
        let e = self.cfg.embed_dim;
        let mut feat = vec![0.0; bsz * e];
        for b in 0..bsz {
            for t in 0..self.num_tokens {
                let base = (b * self.num_tokens + t) * e;
                for j in 0..e {
                    feat[b * e + j] += xn.data()[base + j];
                }
            }
            for j in 0..e {
                feat[b * e + j] /= self.num_tokens as f64;
            }
        }
        let out = EncoderOutput::new(Tensor::new(&[bsz, e], feat)?, self.cfg.output_dim())?;
        Ok((
            out,
            ViTCache {
                patches,
                blocks: block_caches,
                final_ln,
                batch: bsz,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &ViTCache,
        dfeat: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let bsz = cache.batch;
        let e = self.cfg.embed_dim;
        let n = self.num_tokens;

        // Undo the mean pool: every token row receives dfeat / N.
        let mut dtok = vec![0.0; bsz * n * e];
        for b in 0..bsz {
            for t in 0..n {
                let base = (b * n + t) * e;
                for j in 0..e {
                    dtok[base + j] = dfeat.data()[b * e + j] / n as f64;
                }
            }
        }
        let mut dx = Tensor::new(&[bsz, n, e], dtok)?;
        dx = self.norm.backward(ps, &cache.final_ln, &dx, gs)?;
        for (block, bc) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            dx = block.backward(ps, bc, &dx, gs)?;
        }
        // Positional embedding gradient: sum over the batch.
        {
            let mut dpos = vec![0.0; n * e];
            for b in 0..bsz {
                for t in 0..n {
                    let base = (b * n + t) * e;
                    for j in 0..e {
                        dpos[t * e + j] += dx.data()[base + j];
                    }
                }
            }
            gs.accumulate(self.pos_embed, Tensor::new(&[n, e], dpos)?);
        }
        let dtokens = self.patch_embed.backward(ps, &cache.patches, &dx, gs)?;
        self.unpatchify(&dtokens, bsz)
    }

    fn unpatchify(&self, dtokens: &Tensor, bsz: usize) -> Result<Tensor> {
        let p = self.cfg.patch_size;
        let s = self.image_size;
        let grid = s / p;
        let mut out = vec![0.0; bsz * 3 * s * s];
        let src = dtokens.data();
        for b in 0..bsz {
            for gy in 0..grid {
                for gx in 0..grid {
                    let token = gy * grid + gx;
                    let src_base = (b * self.num_tokens + token) * self.patch_dim;
                    for ch in 0..3 {
                        for py in 0..p {
                            let dst_row = ((b * 3 + ch) * s + gy * p + py) * s + gx * p;
                            let src_row = src_base + (ch * p + py) * p;
                            out[dst_row..dst_row + p]
                                .copy_from_slice(&src[src_row..src_row + p]);
                        }
                    }
                }
            }
        }
        Tensor::new(&[bsz, 3, s, s], out)
    }
}
