//! Elementwise activations with cached backward passes.

use crate::fmath;
use crate::tensor::Tensor;

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 * pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn relu(x: &Tensor) -> (Tensor, Tensor) {
    let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
    (y, x.clone())
}

pub fn relu_backward(input: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Exact GELU, `0.5 x (1 + erf(x / sqrt(2)))`.
pub fn gelu(x: &Tensor) -> (Tensor, Tensor) {
    let y = x.map(|v| 0.5 * v * (1.0 + fmath::erf(v * FRAC_1_SQRT_2)));
    (y, x.clone())
}

pub fn gelu_backward(input: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        let cdf = 0.5 * (1.0 + fmath::erf(x * FRAC_1_SQRT_2));
        let pdf = INV_SQRT_2PI * fmath::exp(-0.5 * x * x);
        *d *= cdf + x * pdf;
    }
    dx
}

/// Sigmoid; the cache is the output (its derivative is `y (1 - y)`).
pub fn sigmoid(x: &Tensor) -> (Tensor, Tensor) {
    let y = x.map(|v| 1.0 / (1.0 + fmath::exp(-v)));
    (y.clone(), y)
}

pub fn sigmoid_backward(output: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        *d *= y * (1.0 - y);
    }
    dx
}
