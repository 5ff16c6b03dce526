//! Zero-shot frame prediction: run a trained model over a directory of
//! pre-cropped frames and emit one CSV row per frame with the predicted
//! label and the full probability vector.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cer_core::fusion::predict_labels;
use cer_core::model::Model;
use cer_core::{ImageBatch, ParamStore};

use crate::error::{Error, Result};
use crate::imaging::{load_image, Normalization};

const FRAME_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "jpe"];

/// Lexicographic order with digit runs compared numerically, so `frame_2`
/// sorts before `frame_10` regardless of zero padding.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (ab, bb) = (a.as_bytes(), b.as_bytes());
    let (mut i, mut j) = (0usize, 0usize);
    while i < ab.len() && j < bb.len() {
        if ab[i].is_ascii_digit() && bb[j].is_ascii_digit() {
            let i0 = i;
            let j0 = j;
            while i < ab.len() && ab[i].is_ascii_digit() {
                i += 1;
            }
            while j < bb.len() && bb[j].is_ascii_digit() {
                j += 1;
            }
            let na = a[i0..i].trim_start_matches('0');
            let nb = b[j0..j].trim_start_matches('0');
            let by_magnitude = na.len().cmp(&nb.len()).then_with(|| na.cmp(nb));
            if by_magnitude != Ordering::Equal {
                return by_magnitude;
            }
            // Equal values: fewer leading zeros first, for a total order.
            let by_width = (i - i0).cmp(&(j - j0));
            if by_width != Ordering::Equal {
                return by_width;
            }
        } else {
            let cmp = ab[i].cmp(&bb[j]);
            if cmp != Ordering::Equal {
                return cmp;
            }
            i += 1;
            j += 1;
        }
    }
    (ab.len() - i).cmp(&(bb.len() - j))
}

/// Image files of a directory in natural filename order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase());
        if matches!(ext.as_deref(), Some(e) if FRAME_EXTENSIONS.contains(&e)) {
            frames.push(path);
        }
    }
    frames.sort_by(|a, b| {
        natural_cmp(
            &a.file_name().unwrap_or_default().to_string_lossy(),
            &b.file_name().unwrap_or_default().to_string_lossy(),
        )
    });
    Ok(frames)
}

/// Predict every frame in a directory, writing
/// `frame,pred_label,confidence,p_0..p_{C-1}` rows (probabilities at six
/// decimals). Undecodable frames become `ERROR` rows unless `strict`.
#[allow(clippy::too_many_arguments)]
pub fn predict_dir(
    model: &Model,
    store: &ParamStore,
    frames_dir: &Path,
    out_csv: &Path,
    image_size: usize,
    norm: &Normalization,
    strict: bool,
) -> Result<usize> {
    let frames = list_frames(frames_dir)?;
    if frames.is_empty() {
        return Err(Error::Validation(format!(
            "no decodable image files in {}",
            frames_dir.display()
        )));
    }
    let c = model.num_classes();
    let mut out = String::from("frame,pred_label,confidence");
    for k in 0..c {
        let _ = write!(out, ",p_{k}");
    }
    out.push('\n');

    let mut rows = 0usize;
    for frame in &frames {
        let name = frame
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        match load_image(frame, image_size, norm) {
            Ok(pixels) => {
                let (_c, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
                let batch = ImageBatch::new(
                    pixels.reshape(&[1, 3, h, w]).map_err(Error::Core)?,
                    None,
                )
                .map_err(Error::Core)?;
                let probs = model.predict(store, &batch).map_err(Error::Core)?;
                let (_, label, confidence) = predict_labels(&probs, &model.label_space)
                    .map_err(Error::Core)?
                    .remove(0);
                let _ = write!(out, "{name},{label},{confidence:.6}");
                for &p in probs.row(0) {
                    let _ = write!(out, ",{p:.6}");
                }
                out.push('\n');
            }
            Err(err) if !strict => {
                eprintln!("warning: skipping {name}: {err}");
                let _ = write!(out, "{name},ERROR,0.000000");
                for _ in 0..c {
                    let _ = write!(out, ",0.000000");
                }
                out.push('\n');
            }
            Err(err) => return Err(err),
        }
        rows += 1;
    }
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(out_csv, out).map_err(|e| Error::io(out_csv, e))?;
    Ok(rows)
}
