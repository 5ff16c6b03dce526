//! Named parameter storage. Models hold structure plus [`ParamId`] handles;
//! the actual arrays live in a [`ParamStore`]. This keeps forward passes pure
//! (`&ParamStore`), makes checkpointing a flat name -> array dump, and lets
//! the optimizer own the single mutable reference during training.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to one parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Adam skips entries with `trainable == false` (running statistics,
    /// frozen encoders).
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter under a dot-separated path. Names must be unique;
    /// a collision is a bug in model construction.
    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        self.register_with(name, value, true)
    }

    /// Register non-trainable state (e.g. batch-norm running statistics).
    pub fn register_state(&mut self, name: &str, value: Tensor) -> ParamId {
        self.register_with(name, value, false)
    }

    fn register_with(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name_of(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Mark every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for entry in &mut self.entries {
            if entry.name.starts_with(prefix) {
                entry.trainable = trainable;
            }
        }
    }

    /// Entries in name order (deterministic, used for serialization).
    pub fn iter_sorted(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.by_name
            .iter()
            .map(|(name, &idx)| (name.as_str(), &self.entries[idx]))
    }

    /// Iterate ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar values across all entries.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}

/// Per-parameter gradient accumulator, parallel to a [`ParamStore`].
#[derive(Debug)]
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    pub fn new(store: &ParamStore) -> Self {
        GradStore {
            grads: (0..store.len()).map(|_| None).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: Tensor) {
        match &mut self.grads[id.0] {
            Some(existing) => existing
                .add_assign(&grad)
                .expect("gradient shape mismatch"),
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Global L2 norm over present gradients of trainable parameters.
    pub fn global_norm(&self, store: &ParamStore) -> f64 {
        let mut sq = 0.0;
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            if let Some(g) = self.get(id) {
                for &v in g.data() {
                    sq += v * v;
                }
            }
        }
        crate::fmath::sqrt(sq)
    }

    pub fn scale_all(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Forward-pass context. Eval forwards borrow the store immutably and are
/// safe to run concurrently; train forwards additionally carry the dropout
/// RNG and may update batch-norm running statistics.
pub enum Ctx<'a> {
    Train {
        ps: &'a mut ParamStore,
        rng: &'a mut Rng,
    },
    Eval {
        ps: &'a ParamStore,
    },
}

impl<'a> Ctx<'a> {
    pub fn ps(&self) -> &ParamStore {
        match self {
            Ctx::Train { ps, .. } => ps,
            Ctx::Eval { ps } => ps,
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Ctx::Train { .. })
    }
}

/// Initialization helpers. Linear maps and embeddings use truncated normal
/// (std 0.02); convolutions use He fan-out; biases start at zero.
pub mod init {
    use super::*;

    pub fn trunc_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
        Tensor::from_fn(shape, |_| rng.trunc_normal(std))
    }

    pub fn he_fan_out(rng: &mut Rng, out_c: usize, in_c: usize, k: usize) -> Tensor {
        let fan_out = out_c * k * k;
        let std = crate::fmath::sqrt(2.0 / fan_out as f64);
        Tensor::from_fn(&[out_c, in_c * k * k], |_| rng.normal() * std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut ps = ParamStore::new();
        let id = ps.register("head.fc.weight", Tensor::zeros(&[2, 3]));
        assert_eq!(ps.name_of(id), "head.fc.weight");
        assert_eq!(ps.id_of("head.fc.weight"), Some(id));
        assert_eq!(ps.id_of("missing"), None);
        assert!(ps.is_trainable(id));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut ps = ParamStore::new();
        ps.register("w", Tensor::zeros(&[1]));
        ps.register("w", Tensor::zeros(&[1]));
    }

    #[test]
    fn trainable_prefix_toggles() {
        let mut ps = ParamStore::new();
        let a = ps.register("vit.a", Tensor::zeros(&[1]));
        let b = ps.register("head.b", Tensor::zeros(&[1]));
        ps.set_trainable_prefix("vit.", false);
        assert!(!ps.is_trainable(a));
        assert!(ps.is_trainable(b));
    }

    #[test]
    fn grads_accumulate() {
        let mut ps = ParamStore::new();
        let id = ps.register("w", Tensor::filled(&[2], 0.0));
        let mut gs = GradStore::new(&ps);
        gs.accumulate(id, Tensor::filled(&[2], 1.5));
        gs.accumulate(id, Tensor::filled(&[2], 0.5));
        assert_eq!(gs.get(id).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn sorted_iteration_is_by_name() {
        let mut ps = ParamStore::new();
        ps.register("z.w", Tensor::zeros(&[1]));
        ps.register("a.w", Tensor::zeros(&[1]));
        let names: Vec<&str> = ps.iter_sorted().map(|(n, _)| n).collect();
        assert_eq!(names, ["a.w", "z.w"]);
    }
}
