use alloc::format;
use alloc::vec;

use crate::error::Result;
use crate::fmath;
use crate::layers::softmax::{softmax_rows, softmax_rows_backward};
use crate::layers::{Linear, LinearCache};
use crate::rng::Rng;
use crate::store::{GradStore, ParamStore};
use crate::tensor::Tensor;

/// Multi-head self-attention over token sequences `[B, N, E]` with a fused
/// QKV projection.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub embed_dim: usize,
    pub num_heads: usize,
}

#[derive(Debug)]
pub struct AttnCache {
    qkv_cache: LinearCache,
    proj_cache: LinearCache,
    qkv: Tensor,
    /// Attention probabilities `[B, H, N, N]`; every row sums to 1.
    pub attn: Tensor,
}

impl MultiHeadSelfAttention {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        embed_dim: usize,
        num_heads: usize,
    ) -> Self {
        debug_assert_eq!(embed_dim % num_heads, 0);
        let qkv = Linear::new(ps, rng, &format!("{name}.qkv"), embed_dim, 3 * embed_dim);
        let proj = Linear::new(ps, rng, &format!("{name}.proj"), embed_dim, embed_dim);
        MultiHeadSelfAttention {
            qkv,
            proj,
            embed_dim,
            num_heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Copy head `h` of Q/K/V (`which` = 0/1/2) for batch item `b` into `[N, dh]`.
    fn head_matrix(&self, qkv: &Tensor, b: usize, h: usize, which: usize) -> Tensor {
        let (_, n, three_e) = qkv.dims3().expect("qkv rank 3");
        let e = self.embed_dim;
        let dh = self.head_dim();
        let mut out = vec![0.0; n * dh];
        let data = qkv.data();
        for t in 0..n {
            let base = (b * n + t) * three_e + which * e + h * dh;
            out[t * dh..(t + 1) * dh].copy_from_slice(&data[base..base + dh]);
        }
        Tensor::new(&[n, dh], out).expect("head matrix")
    }

    fn scatter_head(&self, dqkv: &mut Tensor, src: &Tensor, b: usize, h: usize, which: usize) {
        let (_, n, three_e) = dqkv.dims3().expect("qkv rank 3");
        let e = self.embed_dim;
        let dh = self.head_dim();
        let dst = dqkv.data_mut();
        for t in 0..n {
            let base = (b * n + t) * three_e + which * e + h * dh;
            dst[base..base + dh].copy_from_slice(&src.data()[t * dh..(t + 1) * dh]);
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, AttnCache)> {
        let (bsz, n, _e) = x.dims3()?;
        let (qkv, qkv_cache) = self.qkv.forward(ps, x)?;
        let heads = self.num_heads;
        let dh = self.head_dim();
        let scale = 1.0 / fmath::sqrt(dh as f64);

        let mut merged = Tensor::zeros(&[bsz, n, self.embed_dim]);
        let mut attn_all = Tensor::zeros(&[bsz, heads, n, n]);
        for b in 0..bsz {
            for h in 0..heads {
                let q = self.head_matrix(&qkv, b, h, 0);
                let k = self.head_matrix(&qkv, b, h, 1);
                let v = self.head_matrix(&qkv, b, h, 2);
                let scores = q.matmul_nt(&k)?.scale(scale);
                let attn = softmax_rows(&scores);
                let out = attn.matmul(&v)?; // [N, dh]
                {
                    let dst = merged.data_mut();
                    for t in 0..n {
                        let base = (b * n + t) * self.embed_dim + h * dh;
                        dst[base..base + dh].copy_from_slice(&out.data()[t * dh..(t + 1) * dh]);
                    }
                }
                {
                    let dst = attn_all.data_mut();
                    let base = ((b * heads) + h) * n * n;
                    dst[base..base + n * n].copy_from_slice(attn.data());
                }
            }
        }
        let (y, proj_cache) = self.proj.forward(ps, &merged)?;
        Ok((
            y,
            AttnCache {
                qkv_cache,
                proj_cache,
                qkv,
                attn: attn_all,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &AttnCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let dmerged = self.proj.backward(ps, &cache.proj_cache, dy, gs)?;
        let (bsz, n, _e) = dmerged.dims3()?;
        let heads = self.num_heads;
        let dh = self.head_dim();
        let scale = 1.0 / fmath::sqrt(dh as f64);

        let mut dqkv = Tensor::zeros(cache.qkv.shape());
        for b in 0..bsz {
            for h in 0..heads {
                let mut dout = vec![0.0; n * dh];
                for t in 0..n {
                    let base = (b * n + t) * self.embed_dim + h * dh;
                    dout[t * dh..(t + 1) * dh].copy_from_slice(&dmerged.data()[base..base + dh]);
                }
                let dout = Tensor::new(&[n, dh], dout)?;

                let q = self.head_matrix(&cache.qkv, b, h, 0);
                let k = self.head_matrix(&cache.qkv, b, h, 1);
                let v = self.head_matrix(&cache.qkv, b, h, 2);
                let attn = {
                    let base = ((b * heads) + h) * n * n;
                    Tensor::new(&[n, n], cache.attn.data()[base..base + n * n].to_vec())?
                };

                let dattn = dout.matmul_nt(&v)?;
                let dv = attn.matmul_tn(&dout)?;
                let dscores = softmax_rows_backward(&attn, &dattn).scale(scale);
                let dq = dscores.matmul(&k)?;
                let dk = dscores.matmul_tn(&q)?;

                self.scatter_head(&mut dqkv, &dq, b, h, 0);
                self.scatter_head(&mut dqkv, &dk, b, h, 1);
                self.scatter_head(&mut dqkv, &dv, b, h, 2);
            }
        }
        self.qkv.backward(ps, &cache.qkv_cache, &dqkv, gs)
    }
}
