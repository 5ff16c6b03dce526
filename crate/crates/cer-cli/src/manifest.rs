//! Dataset manifests: CSV files of `relative_image_path,label_name` rows,
//! plus the train/val merge that pools several single-expression sources
//! into one corpus.

use std::fmt;
use std::path::{Path, PathBuf};

use cer_core::{LabelSpace, Rng};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: String,
    pub label_index: usize,
    /// Origin tag, e.g. the source manifest's file stem.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub split: Split,
    pub label_space: LabelSpace,
    /// Base directory for relative record paths.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve_path(&self, record: &SampleRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Recognized header spellings for the two columns. Anything else in the
/// first line is treated as data.
fn is_header(path_field: &str, label_field: &str) -> bool {
    let p = path_field.trim().to_ascii_lowercase();
    let l = label_field.trim().to_ascii_lowercase();
    matches!(p.as_str(), "path" | "image_path" | "relative_path" | "relative_image_path" | "frame")
        && matches!(l.as_str(), "label" | "label_name" | "class")
}

/// Load a manifest CSV. `#`-prefixed lines are comments; an optional header
/// line is skipped; every data line must resolve its label in `label_space`.
pub fn load_manifest(
    path: &Path,
    label_space: &LabelSpace,
    split: Split,
) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source: String = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

    let mut records = Vec::new();
    let mut seen_data_line = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (image_path, label_name) = split_line(path, lineno + 1, line)?;
        if !seen_data_line && is_header(image_path, label_name) {
            seen_data_line = true;
            continue;
        }
        seen_data_line = true;
        let label_index = label_space.index_of(label_name.trim()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: format!("unknown label '{}'", label_name.trim()),
        })?;
        let image_path = image_path.trim();
        if image_path.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "empty image path".into(),
            });
        }
        records.push(SampleRecord {
            image_path: image_path.to_string(),
            label_index,
            source: source.clone(),
        });
    }
    if records.is_empty() {
        return Err(Error::Validation(format!(
            "manifest {} contains no records",
            path.display()
        )));
    }
    Ok(DatasetManifest {
        records,
        split,
        label_space: label_space.clone(),
        root,
    })
}

/// Split on the last comma so paths may contain commas; labels never do.
fn split_line<'l>(path: &Path, line_number: usize, line: &'l str) -> Result<(&'l str, &'l str)> {
    match line.rsplit_once(',') {
        Some((p, l)) => Ok((p, l)),
        None => Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_number,
            message: format!("expected 'image_path,label_name', got '{line}'"),
        }),
    }
}

/// Write a manifest as `path,label` rows under a header.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::from("path,label\n");
    for record in &manifest.records {
        out.push_str(&record.image_path);
        out.push(',');
        out.push_str(
            manifest
                .label_space
                .name(record.label_index)
                .map_err(Error::Core)?,
        );
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Pool several manifests into one seed-shuffled train/val split with
/// `round(N * val_fraction)` validation records. Record paths are rewritten
/// to absolute so the merged manifests stay valid wherever they are written.
pub fn merge_unity(
    manifests: &[DatasetManifest],
    val_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if manifests.is_empty() {
        return Err(Error::Validation("no manifests to merge".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Validation(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    let space = &manifests[0].label_space;
    for m in &manifests[1..] {
        if m.label_space != *space {
            return Err(Error::Validation(format!(
                "mixed label spaces: {:?} vs {:?}",
                space.names(),
                m.label_space.names()
            )));
        }
    }

    let mut pooled: Vec<SampleRecord> = Vec::new();
    for m in manifests {
        for r in &m.records {
            // Absolutized so the merged manifests are valid no matter where
            // they are written.
            let resolved = m.resolve_path(r);
            let absolute = std::path::absolute(&resolved)
                .map_err(|e| Error::io(&resolved, e))?;
            pooled.push(SampleRecord {
                image_path: absolute.to_string_lossy().into_owned(),
                label_index: r.label_index,
                source: r.source.clone(),
            });
        }
    }

    let mut rng = Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    let val_indices: Vec<usize> = if stratified {
        // Per-class shuffle and split keeps class proportions in both halves.
        let mut val = Vec::new();
        for class in 0..space.len() {
            let mut members: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| pooled[i].label_index == class)
                .collect();
            rng.shuffle(&mut members);
            let take = (members.len() as f64 * val_fraction).round() as usize;
            val.extend(members.into_iter().take(take));
        }
        val
    } else {
        rng.shuffle(&mut order);
        let n_val = (pooled.len() as f64 * val_fraction).round() as usize;
        order[..n_val].to_vec()
    };

    let mut is_val = vec![false; pooled.len()];
    for &i in &val_indices {
        is_val[i] = true;
    }
    let mut train_records = Vec::with_capacity(pooled.len() - val_indices.len());
    let mut val_records = Vec::with_capacity(val_indices.len());
    for &i in &order {
        if is_val[i] {
            val_records.push(pooled[i].clone());
        } else {
            train_records.push(pooled[i].clone());
        }
    }
    let train = DatasetManifest {
        records: train_records,
        split: Split::Train,
        label_space: space.clone(),
        root: PathBuf::new(),
    };
    let val = DatasetManifest {
        records: val_records,
        split: Split::Val,
        label_space: space.clone(),
        root: PathBuf::new(),
    };
    Ok((train, val))
}
