//! Image decoding and preprocessing: RGB, bilinear resize to the configured
//! square size, scale to [0, 1], then per-channel normalization.

use std::path::Path;

use cer_core::{ImageBatch, Tensor};
use image::imageops::FilterType;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;

/// Per-channel normalization constants. Defaults are the ImageNet statistics
/// the pretrained backbones expect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    /// No-op normalization, handy in tests.
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Decode and preprocess one image to `[3, size, size]`. Fails fast with the
/// offending path; nothing is skipped silently.
pub fn load_image(path: &Path, size: usize, norm: &Normalization) -> Result<Tensor> {
    let decoded = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let resized = if rgb.width() as usize == size && rgb.height() as usize == size {
        rgb
    } else {
        image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle)
    };
    let mut data = vec![0.0f64; 3 * size * size];
    for (x, y, pixel) in resized.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            let v = pixel.0[c] as f64 / 255.0;
            data[c * size * size + y * size + x] = (v - norm.mean[c]) / norm.std[c];
        }
    }
    Tensor::new(&[3, size, size], data).map_err(Error::Core)
}

/// Load the given record indices of a manifest into one labeled batch.
pub fn load_batch(
    manifest: &DatasetManifest,
    indices: &[usize],
    size: usize,
    norm: &Normalization,
) -> Result<ImageBatch> {
    let b = indices.len();
    let mut pixels = vec![0.0f64; b * 3 * size * size];
    let mut labels = Vec::with_capacity(b);
    for (slot, &idx) in indices.iter().enumerate() {
        let record = &manifest.records[idx];
        let img = load_image(&manifest.resolve_path(record), size, norm)?;
        pixels[slot * 3 * size * size..(slot + 1) * 3 * size * size].copy_from_slice(img.data());
        labels.push(record.label_index);
    }
    let tensor = Tensor::new(&[b, 3, size, size], pixels).map_err(Error::Core)?;
    ImageBatch::new(tensor, Some(labels)).map_err(Error::Core)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn save(img: &RgbImage, path: &Path) {
        img.save(path).unwrap();
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        save(&RgbImage::from_pixel(448, 448, Rgb([128, 128, 128])), &path);
        let t = load_image(&path, 224, &Normalization::identity()).unwrap();
        assert_eq!(t.shape(), &[3, 224, 224]);
        let first = t.data()[0];
        assert!((first - 128.0 / 255.0).abs() < 1e-12);
        assert!(t.data().iter().all(|&v| v == first));
    }

    #[test]
    fn aspect_ratio_is_not_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.png");
        save(&RgbImage::from_pixel(100, 200, Rgb([10, 200, 30])), &path);
        let t = load_image(&path, 224, &Normalization::identity()).unwrap();
        assert_eq!(t.shape(), &[3, 224, 224]);
    }

    #[test]
    fn white_maps_to_one_before_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        save(&RgbImage::from_pixel(8, 8, Rgb([255, 255, 255])), &path);
        let t = load_image(&path, 8, &Normalization::identity()).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn normalization_applied_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        save(&RgbImage::from_pixel(4, 4, Rgb([255, 255, 255])), &path);
        let norm = Normalization::default();
        let t = load_image(&path, 4, &norm).unwrap();
        for c in 0..3 {
            let expected = (1.0 - norm.mean[c]) / norm.std[c];
            assert!((t.data()[c * 16] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn undecodable_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, b"this is not a png").unwrap();
        let err = load_image(&path, 8, &Normalization::identity()).unwrap_err();
        assert!(err.to_string().contains("broken.png"));
    }

    #[test]
    fn repeat_loads_are_bitwise_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = RgbImage::from_fn(37, 23, |x, y| Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, 77]));
        save(&img, &path);
        let a = load_image(&path, 32, &Normalization::default()).unwrap();
        let b = load_image(&path, 32, &Normalization::default()).unwrap();
        assert_eq!(a, b);
    }
}
