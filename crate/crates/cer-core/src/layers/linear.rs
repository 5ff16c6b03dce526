use alloc::format;
use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::Rng;
use crate::store::{init, GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Affine map `y = x W + b` with `W: [in, out]`. Accepts rank-2 `[B, in]` or
/// rank-3 `[B, N, in]` inputs; higher leading dims are flattened internally.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug)]
pub struct LinearCache {
    input2d: Tensor,
    orig_shape: Vec<usize>,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = ps.register(
            &format!("{name}.weight"),
            init::trunc_normal(rng, &[in_dim, out_dim], 0.02),
        );
        let b = Some(ps.register(&format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    fn flatten(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let cols = *shape.last().expect("non-empty shape");
        let rows = x.numel() / cols;
        x.clone().reshape(&[rows, cols])
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, LinearCache)> {
        let orig_shape = x.shape().to_vec();
        let x2 = self.flatten(x)?;
        let mut y = x2.matmul(ps.get(self.w))?;
        if let Some(b) = self.b {
            y = y.add_row_broadcast(ps.get(b))?;
        }
        let mut out_shape = orig_shape.clone();
        *out_shape.last_mut().unwrap() = self.out_dim;
        Ok((
            y.reshape(&out_shape)?,
            LinearCache {
                input2d: x2,
                orig_shape,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &LinearCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let rows = cache.input2d.shape()[0];
        let dy2 = dy.clone().reshape(&[rows, self.out_dim])?;
        gs.accumulate(self.w, cache.input2d.matmul_tn(&dy2)?);
        if let Some(b) = self.b {
            gs.accumulate(b, dy2.col_sum()?);
        }
        let dx = dy2.matmul_nt(ps.get(self.w))?;
        dx.reshape(&cache.orig_shape)
    }
}
