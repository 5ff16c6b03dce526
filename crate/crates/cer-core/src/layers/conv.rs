use alloc::format;
use alloc::vec;

use crate::error::Result;
use crate::rng::Rng;
use crate::store::{init, GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

/// 2-D convolution over `[B, C, H, W]`, weight stored as `[out_c, in_c*k*k]`
/// and applied via im2col + matmul. Bias is optional (off when a batch norm
/// follows).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct Conv2dCache {
    input: Tensor,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let w = ps.register(
            &format!("{name}.weight"),
            init::he_fan_out(rng, out_c, in_c, k),
        );
        let b = bias.then(|| ps.register(&format!("{name}.bias"), Tensor::zeros(&[out_c])));
        Conv2d {
            w,
            b,
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<(Tensor, Conv2dCache)> {
        let (bsz, c, h, w) = x.dims4()?;
        debug_assert_eq!(c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_hw(h, w);
        let weight = ps.get(self.w);
        let mut out = vec![0.0; bsz * self.out_c * oh * ow];
        let plane = oh * ow;
        for b in 0..bsz {
            let cols = im2col(x, b, self.k, self.stride, self.pad, oh, ow);
            let y = weight.matmul(&cols)?; // [out_c, oh*ow]
            let dst = &mut out[b * self.out_c * plane..(b + 1) * self.out_c * plane];
            dst.copy_from_slice(y.data());
        }
        let mut out = Tensor::new(&[bsz, self.out_c, oh, ow], out)?;
        if let Some(bid) = self.b {
            let bias = ps.get(bid);
            let data = out.data_mut();
            for b in 0..bsz {
                for oc in 0..self.out_c {
                    let v = bias.data()[oc];
                    let base = (b * self.out_c + oc) * plane;
                    for p in &mut data[base..base + plane] {
                        *p += v;
                    }
                }
            }
        }
        Ok((out, Conv2dCache { input: x.clone() }))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &Conv2dCache,
        dy: &Tensor,
        gs: &mut GradStore,
    ) -> Result<Tensor> {
        let x = &cache.input;
        let (bsz, _, h, w) = x.dims4()?;
        let (_, _, oh, ow) = dy.dims4()?;
        let plane = oh * ow;
        let weight = ps.get(self.w);
        let mut dw = Tensor::zeros(&[self.out_c, self.in_c * self.k * self.k]);
        let mut db = self.b.map(|_| vec![0.0; self.out_c]);
        let mut dx = Tensor::zeros(&[bsz, self.in_c, h, w]);
        for b in 0..bsz {
            let cols = im2col(x, b, self.k, self.stride, self.pad, oh, ow);
            let dy_b = Tensor::new(
                &[self.out_c, plane],
                dy.data()[b * self.out_c * plane..(b + 1) * self.out_c * plane].to_vec(),
            )?;
            dw.add_assign(&dy_b.matmul_nt(&cols)?)?;
            if let Some(db) = &mut db {
                for (oc, d) in db.iter_mut().enumerate() {
                    *d += dy_b.row(oc).iter().sum::<f64>();
                }
            }
            let dcols = weight.matmul_tn(&dy_b)?; // [in_c*k*k, oh*ow]
            col2im(&dcols, &mut dx, b, self.k, self.stride, self.pad, oh, ow);
        }
        gs.accumulate(self.w, dw);
        if let (Some(bid), Some(db)) = (self.b, db) {
            gs.accumulate(bid, Tensor::new(&[self.out_c], db)?);
        }
        Ok(dx)
    }
}

/// Unfold image `b` of `x` into `[in_c*k*k, oh*ow]` patch columns.
#[allow(clippy::too_many_arguments)]
pub fn im2col(x: &Tensor, b: usize, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Tensor {
    let (_, c, h, w) = x.dims4().expect("rank-4 input");
    let mut cols = vec![0.0; c * k * k * oh * ow];
    let data = x.data();
    let n_cols = oh * ow;
    for ch in 0..c {
        let src_plane = &data[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * n_cols;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[row + oy * ow + ox] = src_plane[src_row + ix as usize];
                    }
                }
            }
        }
    }
    Tensor::new(&[c * k * k, n_cols], cols).expect("im2col shape")
}

/// Scatter-add the column gradient back into image `b` of `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &Tensor,
    dx: &mut Tensor,
    b: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let (_, c, h, w) = dx.dims4().expect("rank-4 grad");
    let n_cols = oh * ow;
    let src = dcols.data();
    let dst = dx.data_mut();
    for ch in 0..c {
        let plane_base = (b * c + ch) * h * w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * n_cols;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = plane_base + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[dst_row + ix as usize] += src[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_through() {
        let mut ps = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let conv = Conv2d::new(&mut ps, &mut rng, "c", 1, 1, 1, 1, 0, false);
        *ps.get_mut(conv.w) = Tensor::filled(&[1, 1], 1.0);
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let (y, _) = conv.forward(&ps, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn known_3x3_convolution() {
        let mut ps = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let conv = Conv2d::new(&mut ps, &mut rng, "c", 1, 1, 3, 1, 1, false);
        *ps.get_mut(conv.w) = Tensor::filled(&[1, 9], 1.0); // box filter
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let (y, _) = conv.forward(&ps, &x).unwrap();
        // Interior cell sees all 9 ones; corners see 4.
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn stride_two_halves_output() {
        let mut ps = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let conv = Conv2d::new(&mut ps, &mut rng, "c", 3, 4, 3, 2, 1, true);
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| (i % 7) as f64 * 0.1);
        let (y, _) = conv.forward(&ps, &x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
    }

    #[test]
    fn backward_input_grad_matches_finite_difference() {
        let mut ps = ParamStore::new();
        let mut rng = Rng::seed_from_u64(1);
        let conv = Conv2d::new(&mut ps, &mut rng, "c", 2, 3, 3, 2, 1, true);
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| libm::sin(i as f64 * 0.3));
        let (y, cache) = conv.forward(&ps, &x).unwrap();
        // Scalar loss: weighted sum with fixed coefficients.
        let coefs = Tensor::from_fn(y.shape(), |i| libm::cos(i as f64 * 0.17));
        let loss = |out: &Tensor| -> f64 {
            out.data().iter().zip(coefs.data()).map(|(a, b)| a * b).sum()
        };
        let _ = loss(&y);
        let mut gs = GradStore::new(&ps);
        let dx = conv.backward(&ps, &cache, &coefs, &mut gs).unwrap();
        let h = 1e-6;
        for i in [0usize, 7, 24, 49] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fp = loss(&conv.forward(&ps, &xp).unwrap().0);
            let fm = loss(&conv.forward(&ps, &xm).unwrap().0);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "i={i} fd={fd} an={}", dx.data()[i]);
        }
    }
}
