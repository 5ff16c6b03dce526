use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::Tensor;

/// Max pooling with argmax caching for the backward pass.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d { k, stride, pad }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
        let (bsz, c, h, w) = x.dims4()?;
        let (oh, ow) = self.out_hw(h, w);
        let mut out = vec![0.0; bsz * c * oh * ow];
        let mut argmax = vec![0usize; bsz * c * oh * ow];
        let data = x.data();
        for b in 0..bsz {
            for ch in 0..c {
                let plane = &data[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..self.k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = iy as usize * w + ix as usize;
                                if plane[idx] > best {
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((b * c + ch) * oh + oy) * ow + ox;
                        out[o] = best;
                        argmax[o] = (b * c + ch) * h * w + best_idx;
                    }
                }
            }
        }
        Ok((
            Tensor::new(&[bsz, c, oh, ow], out)?,
            MaxPoolCache {
                argmax,
                in_shape: vec![bsz, c, h, w],
            },
        ))
    }

    pub fn backward(&self, cache: &MaxPoolCache, dy: &Tensor) -> Result<Tensor> {
        let mut dx = Tensor::zeros(&cache.in_shape);
        let dst = dx.data_mut();
        for (i, &g) in dy.data().iter().enumerate() {
            dst[cache.argmax[i]] += g;
        }
        Ok(dx)
    }
}

/// Global average pooling `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (bsz, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = vec![0.0; bsz * c];
    let data = x.data();
    for i in 0..bsz * c {
        out[i] = data[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64;
    }
    Tensor::new(&[bsz, c], out)
}

pub fn global_avg_pool_backward(in_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    let mut dx = Tensor::zeros(in_shape);
    let plane = in_shape[2] * in_shape[3];
    let dst = dx.data_mut();
    for (i, &g) in dy.data().iter().enumerate() {
        let v = g / plane as f64;
        for p in &mut dst[i * plane..(i + 1) * plane] {
            *p = v;
        }
    }
    Ok(dx)
}

/// Average-pool `[B, C, H, W]` into a `g x g` grid -> `[B, C, g, g]`.
/// Region boundaries follow `floor(i*H/g)`, so uneven sizes are handled.
pub fn adaptive_avg_pool(x: &Tensor, g: usize) -> Result<Tensor> {
    let (bsz, c, h, w) = x.dims4()?;
    let mut out = vec![0.0; bsz * c * g * g];
    let data = x.data();
    for b in 0..bsz {
        for ch in 0..c {
            let plane = &data[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for gy in 0..g {
                let (y0, y1) = (gy * h / g, (gy + 1) * h / g);
                for gx in 0..g {
                    let (x0, x1) = (gx * w / g, (gx + 1) * w / g);
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            sum += plane[y * w + xx];
                        }
                    }
                    let count = ((y1 - y0) * (x1 - x0)) as f64;
                    out[((b * c + ch) * g + gy) * g + gx] = sum / count;
                }
            }
        }
    }
    Tensor::new(&[bsz, c, g, g], out)
}

pub fn adaptive_avg_pool_backward(in_shape: &[usize], g: usize, dy: &Tensor) -> Result<Tensor> {
    let (bsz, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    let dst = dx.data_mut();
    let src = dy.data();
    for b in 0..bsz {
        for ch in 0..c {
            let plane_base = (b * c + ch) * h * w;
            for gy in 0..g {
                let (y0, y1) = (gy * h / g, (gy + 1) * h / g);
                for gx in 0..g {
                    let (x0, x1) = (gx * w / g, (gx + 1) * w / g);
                    let count = ((y1 - y0) * (x1 - x0)) as f64;
                    let v = src[((b * c + ch) * g + gy) * g + gx] / count;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            dst[plane_base + y * w + xx] += v;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}
