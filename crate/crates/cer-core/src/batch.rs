//! In-memory image batches and training-time augmentation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A batch of preprocessed images, `[B, 3, H, W]`, with optional labels.
/// Pixels are already normalized; H and W equal the configured image size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub pixels: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl ImageBatch {
    pub fn new(pixels: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        let (b, c, _h, _w) = pixels.dims4()?;
        if c != 3 {
            return Err(CoreError::Shape(format!(
                "image batch must have 3 channels, got {c}"
            )));
        }
        if b == 0 {
            return Err(CoreError::Shape("image batch must be non-empty".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != b {
                return Err(CoreError::Shape(format!(
                    "batch has {b} images but {} labels",
                    labels.len()
                )));
            }
        }
        Ok(ImageBatch { pixels, labels })
    }

    pub fn batch_size(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn image_size(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Horizontally flip one image of a `[B, 3, H, W]` tensor in place.
fn hflip_image(pixels: &mut Tensor, b: usize) {
    let (_, c, h, w) = pixels.dims4().expect("rank-4 batch");
    let data = pixels.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let base = ((b * c + ch) * h + y) * w;
            data[base..base + w].reverse();
        }
    }
}

/// Training augmentation: each image is independently mirrored left-right
/// with probability `flip_prob`. Labels and shapes are untouched.
pub fn augment(mut batch: ImageBatch, rng: &mut Rng, flip_prob: f64) -> ImageBatch {
    if flip_prob <= 0.0 {
        return batch;
    }
    let b = batch.batch_size();
    for i in 0..b {
        if rng.bernoulli(flip_prob) {
            hflip_image(&mut batch.pixels, i);
        }
    }
    batch
}
