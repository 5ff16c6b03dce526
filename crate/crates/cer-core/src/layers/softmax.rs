//! Row-wise softmax in the max-subtracted form, shared by attention, the
//! region gate, and the classifier output.

use crate::fmath;
use crate::tensor::Tensor;

/// Softmax over the last axis of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (rows, cols) = x.dims2().expect("softmax_rows wants rank 2");
    let mut out = x.clone();
    let data = out.data_mut();
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, fmath::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = fmath::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient of `softmax_rows`: `dx = (dy - sum(dy * y)) * y` per row.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (rows, cols) = y.dims2().expect("softmax backward wants rank 2");
    let mut dx = dy.clone();
    let ydata = y.data();
    let dxdata = dx.data_mut();
    for r in 0..rows {
        let yr = &ydata[r * cols..(r + 1) * cols];
        let dr = &mut dxdata[r * cols..(r + 1) * cols];
        let dot: f64 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
        for (d, &yv) in dr.iter_mut().zip(yr) {
            *d = (*d - dot) * yv;
        }
    }
    dx
}
