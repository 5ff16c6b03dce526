use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::fmath;
use crate::store::{Ctx, GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over `[B, C, H, W]`. Training mode normalizes with
/// batch statistics and updates running estimates; eval mode uses the stored
/// running statistics, so per-image outputs do not depend on batch grouping.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

#[derive(Debug)]
pub struct BnCache {
    xhat: Tensor,
    invstd: Vec<f64>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self::with_gamma(ps, name, channels, 1.0)
    }

    /// `gamma_init = 0.0` is used for the last norm of a residual block so
    /// blocks start as identities.
    pub fn with_gamma(ps: &mut ParamStore, name: &str, channels: usize, gamma_init: f64) -> Self {
        let gamma = ps.register(
            &format!("{name}.gamma"),
            Tensor::filled(&[channels], gamma_init),
        );
        let beta = ps.register(&format!("{name}.beta"), Tensor::zeros(&[channels]));
        let running_mean =
            ps.register_state(&format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        let running_var = ps.register_state(
            &format!("{name}.running_var"),
            Tensor::filled(&[channels], 1.0),
        );
        BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Tensor) -> Result<(Tensor, BnCache)> {
        let (bsz, c, h, w) = x.dims4()?;
        debug_assert_eq!(c, self.channels);
        let n = (bsz * h * w) as f64;
        let plane = h * w;

        let (mean, var, train) = match ctx {
            Ctx::Train { ps, .. } => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                let data = x.data();
                for ch in 0..c {
                    let mut sum = 0.0;
                    for b in 0..bsz {
                        let base = (b * c + ch) * plane;
                        sum += data[base..base + plane].iter().sum::<f64>();
                    }
                    mean[ch] = sum / n;
                    let mut sq = 0.0;
                    for b in 0..bsz {
                        let base = (b * c + ch) * plane;
                        for &v in &data[base..base + plane] {
                            let d = v - mean[ch];
                            sq += d * d;
                        }
                    }
                    var[ch] = sq / n; // biased, used for normalization
                }
                // Running estimates keep the unbiased variance.
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                {
                    let rm = ps.get_mut(self.running_mean).data_mut();
                    for ch in 0..c {
                        rm[ch] = (1.0 - BN_MOMENTUM) * rm[ch] + BN_MOMENTUM * mean[ch];
                    }
                }
                {
                    let rv = ps.get_mut(self.running_var).data_mut();
                    for ch in 0..c {
                        rv[ch] = (1.0 - BN_MOMENTUM) * rv[ch] + BN_MOMENTUM * var[ch] * unbias;
                    }
                }
                (mean, var, true)
            }
            Ctx::Eval { ps } => (
                ps.get(self.running_mean).data().to_vec(),
                ps.get(self.running_var).data().to_vec(),
                false,
            ),
        };

        let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / fmath::sqrt(v + BN_EPS)).collect();
        let ps = ctx.ps();
        let gamma = ps.get(self.gamma).data();
        let beta = ps.get(self.beta).data();

        let mut xhat = x.clone();
        let mut out = Tensor::zeros(x.shape());
        {
            let xh = xhat.data_mut();
            let o = out.data_mut();
            for b in 0..bsz {
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for i in base..base + plane {
                        xh[i] = (xh[i] - mean[ch]) * invstd[ch];
                        o[i] = gamma[ch] * xh[i] + beta[ch];
                    }
                }
            }
        }
        Ok((out, BnCache { xhat, invstd, train }))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &BnCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let (bsz, c, h, w) = dy.dims4()?;
        let plane = h * w;
        let n = (bsz * h * w) as f64;
        let gamma = ps.get(self.gamma).data();
        let xhat = cache.xhat.data();
        let dyd = dy.data();

        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..bsz {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    dgamma[ch] += dyd[i] * xhat[i];
                    dbeta[ch] += dyd[i];
                }
            }
        }
        sum_dy.copy_from_slice(&dbeta);
        sum_dy_xhat.copy_from_slice(&dgamma);

        let mut dx = Tensor::zeros(dy.shape());
        let dxd = dx.data_mut();
        for b in 0..bsz {
            for ch in 0..c {
                let g = gamma[ch] * cache.invstd[ch];
                let base = (b * c + ch) * plane;
                if cache.train {
                    for i in base..base + plane {
                        dxd[i] = g * (dyd[i] - sum_dy[ch] / n - xhat[i] * sum_dy_xhat[ch] / n);
                    }
                } else {
                    // Eval statistics are constants.
                    for i in base..base + plane {
                        dxd[i] = g * dyd[i];
                    }
                }
            }
        }
        gs.accumulate(self.gamma, Tensor::new(&[c], dgamma)?);
        gs.accumulate(self.beta, Tensor::new(&[c], dbeta)?);
        Ok(dx)
    }
}

/// Layer normalization over the last axis. Input may be `[B, N, D]` or `[R, D]`.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

#[derive(Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    invstd: Vec<f64>,
    orig_shape: Vec<usize>,
}

const LN_EPS: f64 = 1e-6;

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = ps.register(&format!("{name}.gamma"), Tensor::filled(&[dim], 1.0));
        let beta = ps.register(&format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta, dim }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let orig_shape = x.shape().to_vec();
        let rows = x.numel() / self.dim;
        let x2 = x.clone().reshape(&[rows, self.dim])?;
        let gamma = ps.get(self.gamma).data();
        let beta = ps.get(self.beta).data();
        let mut xhat = x2.clone();
        let mut out = Tensor::zeros(&[rows, self.dim]);
        let mut invstd = vec![0.0; rows];
        {
            let xh = xhat.data_mut();
            let o = out.data_mut();
            for r in 0..rows {
                let row = &mut xh[r * self.dim..(r + 1) * self.dim];
                let mean = row.iter().sum::<f64>() / self.dim as f64;
                let var =
                    row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / self.dim as f64;
                let is = 1.0 / fmath::sqrt(var + LN_EPS);
                invstd[r] = is;
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean) * is;
                    o[r * self.dim + j] = gamma[j] * *v + beta[j];
                }
            }
        }
        Ok((
            out.reshape(&orig_shape)?,
            LayerNormCache {
                xhat,
                invstd,
                orig_shape,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &LayerNormCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let rows = cache.invstd.len();
        let d = self.dim;
        let dy2 = dy.clone().reshape(&[rows, d])?;
        let gamma = ps.get(self.gamma).data();
        let xhat = cache.xhat.data();
        let dyd = dy2.data();

        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        let mut dx = Tensor::zeros(&[rows, d]);
        let dxd = dx.data_mut();
        for r in 0..rows {
            let base = r * d;
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..d {
                let g = dyd[base + j];
                dgamma[j] += g * xhat[base + j];
                dbeta[j] += g;
                let dxhat = g * gamma[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat[base + j];
            }
            let is = cache.invstd[r];
            for j in 0..d {
                let dxhat = dyd[base + j] * gamma[j];
                dxd[base + j] =
                    is * (dxhat - sum_dxhat / d as f64 - xhat[base + j] * sum_dxhat_xhat / d as f64);
            }
        }
        gs.accumulate(self.gamma, Tensor::new(&[d], dgamma)?);
        gs.accumulate(self.beta, Tensor::new(&[d], dbeta)?);
        dx.reshape(&cache.orig_shape)
    }
}
