//! Adam with bias correction (Kingma & Ba, 2015). Moment buffers are keyed
//! by parameter index; entries marked non-trainable are skipped, which is
//! how encoder freezing works.

use alloc::vec::Vec;

use crate::fmath;
use crate::store::{GradStore, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct Adam {
    pub params: AdamParams,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, params: AdamParams) -> Self {
        Adam {
            params,
            m: (0..store.len()).map(|_| None).collect(),
            v: (0..store.len()).map(|_| None).collect(),
            t: 0,
        }
    }

    /// One update over every trainable parameter with a gradient present.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore, lr: f64) {
        self.t += 1;
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let bc1 = 1.0 - libm::pow(b1, self.t as f64);
        let bc2 = 1.0 - libm::pow(b2, self.t as f64);
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(grad) = grads.get(id) else { continue };
            let idx = id.index();
            let m = self.m[idx].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.v[idx].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let value = store.get_mut(id);
            let md = m.data_mut();
            let vd = v.data_mut();
            let wd = value.data_mut();
            for ((w, (m_i, v_i)), &g) in wd
                .iter_mut()
                .zip(md.iter_mut().zip(vd.iter_mut()))
                .zip(grad.data())
            {
                *m_i = b1 * *m_i + (1.0 - b1) * g;
                *v_i = b2 * *v_i + (1.0 - b2) * g * g;
                let m_hat = *m_i / bc1;
                let v_hat = *v_i / bc2;
                *w -= lr * m_hat / (fmath::sqrt(v_hat) + self.params.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ParamStore;

    /// Scalar reference Adam, written independently of the vector path.
    pub fn adam_oracle_steps(
        w0: f64,
        grads: &[f64],
        lr: f64,
        p: AdamParams,
    ) -> f64 {
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as f64;
            m = p.beta1 * m + (1.0 - p.beta1) * g;
            v = p.beta2 * v + (1.0 - p.beta2) * g * g;
            let m_hat = m / (1.0 - libm::pow(p.beta1, t));
            let v_hat = v / (1.0 - libm::pow(p.beta2, t));
            w -= lr * m_hat / (libm::sqrt(v_hat) + p.eps);
        }
        w
    }

    #[test]
    fn matches_scalar_oracle_for_ten_steps() {
        let mut ps = ParamStore::new();
        let id = ps.register("w", Tensor::scalar(0.7));
        let p = AdamParams::default();
        let mut adam = Adam::new(&ps, p);
        let grads_seq = [0.3, -0.1, 0.25, 0.9, -0.4, 0.0, 0.12, -0.33, 0.5, 0.05];
        for &g in &grads_seq {
            let mut gs = GradStore::new(&ps);
            gs.accumulate(id, Tensor::scalar(g));
            adam.step(&mut ps, &gs, 1e-2);
        }
        let expected = adam_oracle_steps(0.7, &grads_seq, 1e-2, p);
        let got = ps.get(id).data()[0];
        assert!((got - expected).abs() < 1e-9, "got {got}, want {expected}");
    }

    #[test]
    fn zero_lr_leaves_parameters_bitwise_unchanged() {
        let mut ps = ParamStore::new();
        let id = ps.register("w", Tensor::from_fn(&[4], |i| i as f64 * 0.13));
        let before = ps.get(id).clone();
        let mut adam = Adam::new(&ps, AdamParams::default());
        let mut gs = GradStore::new(&ps);
        gs.accumulate(id, Tensor::filled(&[4], 1.0));
        adam.step(&mut ps, &gs, 0.0);
        assert_eq!(ps.get(id), &before);
    }

    #[test]
    fn non_trainable_entries_skipped() {
        let mut ps = ParamStore::new();
        let id = ps.register_state("bn.running_mean", Tensor::scalar(0.5));
        let mut adam = Adam::new(&ps, AdamParams::default());
        let mut gs = GradStore::new(&ps);
        gs.accumulate(id, Tensor::scalar(10.0));
        adam.step(&mut ps, &gs, 1.0);
        assert_eq!(ps.get(id).data()[0], 0.5);
    }
}
