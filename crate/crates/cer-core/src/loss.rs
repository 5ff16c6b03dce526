//! Cross-entropy from logits via a fused log-softmax + NLL path. The softmax
//! itself is only materialized at inference time.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::fmath;
use crate::tensor::Tensor;

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

/// Loss plus its gradient w.r.t. the logits, `(softmax - onehot) / B`.
pub fn cross_entropy_with_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = logits.dims2()?;
    if labels.len() != b {
        return Err(CoreError::Shape(format!(
            "{b} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(CoreError::Index(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = Tensor::zeros(&[b, c]);
    let mut total = 0.0;
    {
        let g = grad.data_mut();
        for r in 0..b {
            let row = logits.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, fmath::max);
            let mut sum = 0.0;
            for &z in row {
                sum += fmath::exp(z - max);
            }
            let lse = max + fmath::ln(sum);
            total += lse - row[labels[r]];
            for (j, &z) in row.iter().enumerate() {
                let p = fmath::exp(z - lse);
                g[r * c + j] = (p - if j == labels[r] { 1.0 } else { 0.0 }) / b as f64;
            }
        }
    }
    Ok((total / b as f64, grad))
}

/// Independent reference used in tests: explicit softmax then `-ln p`.
/// Kept separate from the fused path on purpose.
pub fn cross_entropy_naive(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, _) = logits.dims2()?;
    let mut total = 0.0;
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, fmath::max);
        let exps: Vec<f64> = row.iter().map(|&z| fmath::exp(z - max)).collect();
        let sum: f64 = exps.iter().sum();
        let p = exps[labels[r]] / sum;
        total += -fmath::ln(p);
    }
    Ok(total / b as f64)
}
