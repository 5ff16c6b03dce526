//! Epoch batching: a deterministic index plan plus lazy image loading.
//! Every record appears exactly once per epoch; the final batch may be short.

use cer_core::{ImageBatch, Rng};

use crate::error::Result;
use crate::imaging::{load_batch, Normalization};
use crate::manifest::DatasetManifest;

/// Index batches for one epoch. With `shuffle` the order is a
/// seed-deterministic permutation; otherwise manifest order.
pub fn batch_plan(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        Rng::seed_from_u64(seed).shuffle(&mut order);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Lazily loaded epoch iterator over a manifest.
pub fn make_batches<'m>(
    manifest: &'m DatasetManifest,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    image_size: usize,
    norm: Normalization,
) -> impl Iterator<Item = Result<ImageBatch>> + 'm {
    let plan = batch_plan(manifest.len(), batch_size, shuffle, seed);
    plan.into_iter()
        .map(move |indices| load_batch(manifest, &indices, image_size, &norm))
}
