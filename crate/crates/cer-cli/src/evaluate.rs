//! Model evaluation over a manifest and report export: a metrics table in
//! the reference layout (one row per class, then `acc` and `F1`), the raw
//! confusion matrix as CSV, and a rendered heatmap with per-cell counts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cer_core::fusion::predict_labels;
use cer_core::metrics::{ConfusionMatrix, EvalReport};
use cer_core::model::Model;
use cer_core::{LabelSpace, ParamStore};
use image::{Rgb, RgbImage};

use crate::batches::batch_plan;
use crate::error::{Error, Result};
use crate::imaging::{load_batch, Normalization};
use crate::manifest::DatasetManifest;

/// Eval-mode predictions over the whole manifest, reduced to an [`EvalReport`].
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore,
    manifest: &DatasetManifest,
    batch_size: usize,
    image_size: usize,
    norm: &Normalization,
) -> Result<EvalReport> {
    if model.num_classes() != manifest.label_space.len() {
        return Err(Error::Validation(format!(
            "model has {} classes but manifest taxonomy {:?} has {}",
            model.num_classes(),
            manifest.label_space.names(),
            manifest.label_space.len()
        )));
    }
    let mut y_true = Vec::with_capacity(manifest.len());
    let mut y_pred = Vec::with_capacity(manifest.len());
    for indices in batch_plan(manifest.len(), batch_size, false, 0) {
        let batch = load_batch(manifest, &indices, image_size, norm)?;
        let probs = model.predict(store, &batch).map_err(Error::Core)?;
        let preds = predict_labels(&probs, &manifest.label_space).map_err(Error::Core)?;
        for (&idx, (pred, _, _)) in indices.iter().zip(&preds) {
            y_true.push(manifest.records[idx].label_index);
            y_pred.push(*pred);
        }
    }
    let cm = ConfusionMatrix::from_predictions(&y_true, &y_pred, &manifest.label_space)
        .map_err(Error::Core)?;
    Ok(cm.report())
}

/// Paths written by [`export_report`].
#[derive(Debug)]
pub struct ExportedFiles {
    pub metrics_csv: PathBuf,
    pub confusion_csv: PathBuf,
    pub heatmap_png: PathBuf,
}

/// The table layout used in the reference results: per-class recall rows in
/// taxonomy order, then overall accuracy and macro-F1, at two decimals.
pub fn render_metrics_table(report: &EvalReport) -> String {
    let mut out = String::from("row_name,value\n");
    let space = report.confusion.label_space();
    for (i, name) in space.names().iter().enumerate() {
        let _ = writeln!(out, "{name},{:.2}", report.per_class_recall[i]);
    }
    let _ = writeln!(out, "acc,{:.2}", report.accuracy);
    let _ = writeln!(out, "F1,{:.2}", report.macro_f1);
    out
}

pub fn render_confusion_csv(cm: &ConfusionMatrix) -> String {
    let names = cm.label_space().names();
    let mut out = String::from("true/pred");
    for name in names {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        let _ = write!(out, "{name}");
        for j in 0..cm.num_classes() {
            let _ = write!(out, ",{}", cm.count(i, j));
        }
        out.push('\n');
    }
    out
}

/// Parse a confusion CSV back (test support for the round-trip contract).
pub fn parse_confusion_csv(text: &str, space: &LabelSpace) -> Result<ConfusionMatrix> {
    let c = space.len();
    let mut counts = vec![0u64; c * c];
    for (i, line) in text.lines().skip(1).enumerate() {
        let mut fields = line.split(',');
        let _name = fields.next();
        for (j, field) in fields.enumerate() {
            counts[i * c + j] = field.trim().parse().map_err(|_| {
                Error::Validation(format!("bad count '{field}' in confusion CSV"))
            })?;
        }
    }
    ConfusionMatrix::from_counts(counts, space).map_err(Error::Core)
}

pub fn export_report(report: &EvalReport, out_dir: &Path) -> Result<ExportedFiles> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_csv = out_dir.join("metrics.csv");
    std::fs::write(&metrics_csv, render_metrics_table(report))
        .map_err(|e| Error::io(&metrics_csv, e))?;
    let confusion_csv = out_dir.join("confusion.csv");
    std::fs::write(&confusion_csv, render_confusion_csv(&report.confusion))
        .map_err(|e| Error::io(&confusion_csv, e))?;
    let heatmap_png = out_dir.join("confusion.png");
    render_heatmap(&report.confusion)
        .save(&heatmap_png)
        .map_err(|e| Error::Image {
            path: heatmap_png.clone(),
            message: e.to_string(),
        })?;
    Ok(ExportedFiles {
        metrics_csv,
        confusion_csv,
        heatmap_png,
    })
}

pub fn report_to_json(report: &EvalReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map_err(|e| Error::Validation(format!("report serialization failed: {e}")))
}

pub fn report_from_json(text: &str) -> Result<EvalReport> {
    serde_json::from_str(text).map_err(|e| Error::Validation(format!("bad report JSON: {e}")))
}

// --- heatmap rendering ----------------------------------------------------

const CELL: u32 = 48;
const MARGIN: u32 = 20;

/// 5x7 digit glyphs, one bit row per byte.
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

fn stamp_digit(img: &mut RgbImage, digit: usize, x0: i64, y0: i64, scale: u32, color: Rgb<u8>) {
    for (row, bits) in DIGITS[digit].iter().enumerate() {
        for col in 0..5u32 {
            if bits & (1 << (4 - col)) != 0 {
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = x0 + (col * scale + dx) as i64;
                        let y = y0 + (row as u32 * scale + dy) as i64;
                        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height()
                        {
                            img.put_pixel(x as u32, y as u32, color);
                        }
                    }
                }
            }
        }
    }
}

fn stamp_number(img: &mut RgbImage, value: u64, cx: i64, cy: i64, scale: u32, color: Rgb<u8>) {
    let text = value.to_string();
    let glyph_w = (5 * scale + scale) as i64;
    let total_w = glyph_w * text.len() as i64 - scale as i64;
    let mut x = cx - total_w / 2;
    let y = cy - (7 * scale / 2) as i64;
    for ch in text.chars() {
        stamp_digit(img, ch as usize - '0' as usize, x, y, scale, color);
        x += glyph_w;
    }
}

/// White-to-blue heatmap with the raw count stamped in every cell and class
/// indices along both axes. Class names live in the CSV next to it.
pub fn render_heatmap(cm: &ConfusionMatrix) -> RgbImage {
    let c = cm.num_classes() as u32;
    let size = MARGIN + c * CELL + 1;
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let max = cm.counts().iter().copied().max().unwrap_or(0).max(1) as f64;

    for i in 0..c {
        for j in 0..c {
            let count = cm.count(i as usize, j as usize);
            let t = count as f64 / max;
            // white (0) -> steel blue (max)
            let r = (255.0 - t * (255.0 - 42.0)) as u8;
            let g = (255.0 - t * (255.0 - 96.0)) as u8;
            let b = (255.0 - t * (255.0 - 160.0)) as u8;
            let x0 = MARGIN + j * CELL;
            let y0 = MARGIN + i * CELL;
            for y in y0..y0 + CELL {
                for x in x0..x0 + CELL {
                    img.put_pixel(x, y, Rgb([r, g, b]));
                }
            }
            let text_color = if t > 0.5 {
                Rgb([255, 255, 255])
            } else {
                Rgb([30, 30, 30])
            };
            stamp_number(
                &mut img,
                count,
                (x0 + CELL / 2) as i64,
                (y0 + CELL / 2) as i64,
                2,
                text_color,
            );
        }
    }
    // Grid lines and axis indices.
    let grid = Rgb([120, 120, 120]);
    for k in 0..=c {
        let pos = MARGIN + k * CELL;
        for t in MARGIN..size {
            img.put_pixel(pos.min(size - 1), t, grid);
            img.put_pixel(t, pos.min(size - 1), grid);
        }
    }
    for k in 0..c {
        stamp_number(
            &mut img,
            k as u64,
            (MARGIN + k * CELL + CELL / 2) as i64,
            (MARGIN / 2) as i64,
            1,
            Rgb([0, 0, 0]),
        );
        stamp_number(
            &mut img,
            k as u64,
            (MARGIN / 2) as i64,
            (MARGIN + k * CELL + CELL / 2) as i64,
            1,
            Rgb([0, 0, 0]),
        );
    }
    img
}
