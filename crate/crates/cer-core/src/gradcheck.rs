//! Central finite-difference gradient checking. The numerical side never
//! touches the analytic backward code: it re-runs the forward pass on
//! perturbed copies of the parameter store, so the two estimates are
//! independent.

use alloc::string::String;
use alloc::vec::Vec;

use crate::fmath;
use crate::store::{GradStore, ParamId, ParamStore};

/// Worst parameter found by [`compare`]. `max_rel_error` only considers
/// value pairs whose absolute gap exceeds the floor; for gradients that are
/// zero to within roundoff the relative error is meaningless.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Central-difference gradient of `loss` w.r.t. every trainable parameter.
/// `loss` must be a pure function of the store.
pub fn numerical_gradients(
    store: &ParamStore,
    ids: &[ParamId],
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<(ParamId, Vec<f64>)> {
    let mut out = Vec::new();
    for &id in ids {
        let n = store.get(id).numel();
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let w = store.get(id).data()[i];
            // Scale-aware step keeps truncation and roundoff balanced.
            let h = 1e-6 * (1.0 + fmath::abs(w));
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] = w + h;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] = w - h;
            grads.push((loss(&plus) - loss(&minus)) / (2.0 * h));
        }
        out.push((id, grads));
    }
    out
}

/// Compare analytic gradients against the numerical ones. Agreement per
/// value: `|a - n| <= abs_tol` or `|a - n| <= rel_tol * max(|a|, |n|)`.
pub fn compare(
    store: &ParamStore,
    analytic: &GradStore,
    numerical: &[(ParamId, Vec<f64>)],
    rel_tol: f64,
    abs_tol: f64,
) -> core::result::Result<GradCheckReport, String> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for (id, num) in numerical {
        let name = store.name_of(*id);
        let Some(ana) = analytic.get(*id) else {
            return Err(alloc::format!("no analytic gradient for '{name}'"));
        };
        for (i, (&a, &n)) in ana.data().iter().zip(num).enumerate() {
            report.checked += 1;
            let abs = fmath::abs(a - n);
            let scale = fmath::max(fmath::abs(a), fmath::abs(n));
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            if abs > report.max_abs_error {
                report.max_abs_error = abs;
            }
            if rel > report.max_rel_error && abs > abs_tol {
                report.max_rel_error = rel;
                report.worst_param = alloc::format!("{name}[{i}]");
            }
            if abs > abs_tol && rel > rel_tol {
                return Err(alloc::format!(
                    "gradient mismatch at {name}[{i}]: analytic {a}, numerical {n} (rel {rel:e})"
                ));
            }
        }
    }
    Ok(report)
}

/// Convenience wrapper: numerical gradients for `ids`, then compare.
pub fn check(
    store: &ParamStore,
    analytic: &GradStore,
    ids: &[ParamId],
    loss: impl FnMut(&ParamStore) -> f64,
    rel_tol: f64,
    abs_tol: f64,
) -> core::result::Result<GradCheckReport, String> {
    let numerical = numerical_gradients(store, ids, loss);
    compare(store, analytic, &numerical, rel_tol, abs_tol)
}
