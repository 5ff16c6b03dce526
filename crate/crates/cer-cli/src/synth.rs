//! Synthetic datasets: one distinct procedural color/texture pattern per
//! class, with mild per-image jitter. Used by the test suite and by
//! `cer synth-data` so the whole pipeline can be exercised without any real
//! corpus.

use std::path::{Path, PathBuf};

use cer_core::{LabelSpace, Rng};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::manifest::{load_manifest, DatasetManifest, Split};

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub per_class: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            per_class: 16,
            image_size: 64,
            seed: 0,
        }
    }
}

/// Base colors spaced around the hue wheel; pattern index selects a texture.
fn base_color(class: usize, n: usize) -> [f64; 3] {
    let t = class as f64 / n as f64 * std::f64::consts::TAU;
    [
        0.5 + 0.45 * t.cos(),
        0.5 + 0.45 * (t + 2.1).cos(),
        0.5 + 0.45 * (t + 4.2).cos(),
    ]
}

fn pattern_value(class: usize, x: u32, y: u32, size: u32, phase: f64) -> f64 {
    let fx = x as f64 / size as f64;
    let fy = y as f64 / size as f64;
    match class % 8 {
        0 => 1.0,                                                   // solid
        1 => ((fy * 8.0 + phase) as usize % 2) as f64 * 0.6 + 0.4,  // horizontal stripes
        2 => ((fx * 8.0 + phase) as usize % 2) as f64 * 0.6 + 0.4,  // vertical stripes
        3 => (((fx * 6.0) as usize + (fy * 6.0) as usize) % 2) as f64 * 0.6 + 0.4, // checker
        4 => (((fx + fy) * 6.0 + phase) as usize % 2) as f64 * 0.6 + 0.4, // diagonal stripes
        5 => {
            // dots
            let gx = (fx * 6.0 + phase).fract();
            let gy = (fy * 6.0 + phase).fract();
            let d = ((gx - 0.5).powi(2) + (gy - 0.5).powi(2)).sqrt();
            if d < 0.3 {
                1.0
            } else {
                0.35
            }
        }
        6 => 0.3 + 0.7 * fx,                                        // gradient
        _ => {
            // rings
            let d = ((fx - 0.5).powi(2) + (fy - 0.5).powi(2)).sqrt();
            (((d * 10.0 + phase) as usize) % 2) as f64 * 0.6 + 0.4
        }
    }
}

/// Render one image for `class` with seeded jitter.
pub fn render_image(class: usize, num_classes: usize, size: u32, rng: &mut Rng) -> RgbImage {
    let color = base_color(class, num_classes);
    let brightness = rng.uniform(0.85, 1.15);
    let phase = rng.uniform(0.0, 1.0);
    let mut noise = Rng::seed_from_u64(rng.next_u64());
    RgbImage::from_fn(size, size, |x, y| {
        let v = pattern_value(class, x, y, size, phase) * brightness;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let n = noise.uniform(-0.03, 0.03);
            let value = (color[c] * v + n).clamp(0.0, 1.0);
            px[c] = (value * 255.0).round() as u8;
        }
        Rgb(px)
    })
}

/// Write `per_class` images for every class plus a `manifest.csv` with
/// relative paths. Returns the loaded manifest.
pub fn generate_dataset(
    dir: &Path,
    label_space: &LabelSpace,
    spec: &SynthSpec,
) -> Result<DatasetManifest> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let mut lines = String::from("path,label\n");
    for class in 0..label_space.len() {
        for i in 0..spec.per_class {
            let img = render_image(class, label_space.len(), spec.image_size, &mut rng);
            let rel = format!("images/class{class}_{i:03}.png");
            let path = dir.join(&rel);
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            lines.push_str(&rel);
            lines.push(',');
            lines.push_str(label_space.name(class).map_err(Error::Core)?);
            lines.push('\n');
        }
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, lines).map_err(|e| Error::io(&manifest_path, e))?;
    load_manifest(&manifest_path, label_space, Split::Train)
}

/// Directory of bare frames (no labels), e.g. for `cer predict` tests.
pub fn generate_frames(dir: &Path, count: usize, size: u32, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let img = render_image(i % 7, 7, size, &mut rng);
        let path = dir.join(format!("frame_{i:05}.png"));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        out.push(path);
    }
    Ok(out)
}
