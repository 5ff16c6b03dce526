//! Checkpoint archive: a magic header, a JSON metadata record (model spec,
//! taxonomy, toolkit version), then flat `name -> f64 array` entries sorted
//! by name. Writes are byte-deterministic and round-trips are bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use cer_core::encoders::{build_encoder, MANetConfig, ResNetConfig, ViTConfig};
use cer_core::fusion::{FusionHead, FusionHeadConfig};
use cer_core::model::{Model, ModelKind};
use cer_core::{LabelSpace, ParamStore, Rng, Tensor};

use crate::error::{Error, Result};
use crate::imaging::Normalization;

const MAGIC: &[u8; 8] = b"CERCKPT1";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the model architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub vit: Option<ViTConfig>,
    pub manet: Option<MANetConfig>,
    pub resnet: Option<ResNetConfig>,
    pub head: FusionHeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub toolkit_version: String,
    pub model: ModelSpec,
    pub image_size: usize,
    /// Normalization the model was trained with; evaluation and prediction
    /// reuse it so preprocessing can never drift from training.
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub label_names: Vec<String>,
    /// Canonical feature concatenation order; rejected on mismatch so stale
    /// checkpoints cannot silently reorder features.
    pub encoder_order: Vec<String>,
}

impl CheckpointMeta {
    pub fn new(
        model: &ModelSpec,
        image_size: usize,
        norm: &Normalization,
        label_space: &LabelSpace,
    ) -> Self {
        CheckpointMeta {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            model: model.clone(),
            image_size,
            mean: norm.mean,
            std: norm.std,
            label_names: label_space.names().to_vec(),
            encoder_order: model
                .kind
                .encoder_kinds()
                .iter()
                .map(|k| k.as_str().to_string())
                .collect(),
        }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            mean: self.mean,
            std: self.std,
        }
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        let refs: Vec<&str> = self.label_names.iter().map(String::as_str).collect();
        LabelSpace::from_names(&refs).map_err(Error::Core)
    }
}

impl ModelSpec {
    /// Instantiate the architecture with fresh parameters drawn from `seed`.
    pub fn build(
        &self,
        image_size: usize,
        label_space: &LabelSpace,
        seed: u64,
    ) -> Result<(Model, ParamStore)> {
        let mut ps = ParamStore::new();
        let mut rng = Rng::seed_from_u64(seed);
        let vit = self.vit.clone().unwrap_or_default();
        let manet = self.manet.clone().unwrap_or_default();
        let resnet = self.resnet.clone().unwrap_or_default();
        let mut encoders = Vec::new();
        for kind in self.kind.encoder_kinds() {
            encoders.push(
                build_encoder(kind, &mut ps, &mut rng, image_size, &vit, &manet, &resnet)
                    .map_err(Error::Core)?,
            );
        }
        let head = FusionHead::new(&mut ps, &mut rng, self.head.clone()).map_err(Error::Core)?;
        let model = Model::new(self.kind, encoders, head, label_space.clone(), image_size)
            .map_err(Error::Core)?;
        Ok((model, ps))
    }
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, store: &ParamStore) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    let meta_json = serde_json::to_vec(meta).map_err(|e| Error::CheckpointFormat {
        path: path.to_path_buf(),
        message: format!("metadata encoding failed: {e}"),
    })?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&meta_json).map_err(io)?;

    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, entry) in store.iter_sorted() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name_bytes).map_err(io)?;
        let shape = entry.value.shape();
        w.write_all(&[shape.len() as u8]).map_err(io)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in entry.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<(String, Tensor)>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |message: String| Error::CheckpointFormat {
        path: path.to_path_buf(),
        message,
    };

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r, path)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let meta_len = read_u32(&mut r, path)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta_bytes, path)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| bad(format!("garbled metadata: {e}")))?;

    let expected_order: Vec<String> = meta
        .model
        .kind
        .encoder_kinds()
        .iter()
        .map(|k| k.as_str().to_string())
        .collect();
    if meta.encoder_order != expected_order {
        return Err(bad(format!(
            "checkpoint declares encoder order {:?}; this toolkit requires {:?}",
            meta.encoder_order, expected_order
        )));
    }

    let count = read_u32(&mut r, path)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad("parameter name is not UTF-8".into()))?;
        let mut ndim = [0u8; 1];
        read_exact(&mut r, &mut ndim, path)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for v in &mut data {
            read_exact(&mut r, &mut buf, path)?;
            *v = f64::from_le_bytes(buf);
        }
        entries.push((
            name,
            Tensor::new(&shape, data).map_err(Error::Core)?,
        ));
    }
    Ok((meta, entries))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::CheckpointFormat {
        path: path.to_path_buf(),
        message: format!("truncated checkpoint: {e}"),
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf, path)?;
    Ok(u16::from_le_bytes(buf))
}

/// What a non-strict load did.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// `(name, reason)` for checkpoint entries that were not applied.
    pub skipped: Vec<(String, String)>,
    /// Store parameters with no checkpoint entry.
    pub missing: Vec<String>,
}

/// Copy matching entries into the store. Strict mode fails on any unknown
/// name, shape mismatch, or missing parameter, listing the offenders;
/// non-strict skips them and reports (classifier heads typically mismatch).
pub fn load_into(
    store: &mut ParamStore,
    entries: &[(String, Tensor)],
    strict: bool,
) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (name, tensor) in entries {
        match store.id_of(name) {
            Some(id) if store.get(id).shape() == tensor.shape() => {
                *store.get_mut(id) = tensor.clone();
                report.loaded.push(name.clone());
            }
            Some(id) => report.skipped.push((
                name.clone(),
                format!(
                    "shape mismatch: checkpoint {:?} vs model {:?}",
                    tensor.shape(),
                    store.get(id).shape()
                ),
            )),
            None => report
                .skipped
                .push((name.clone(), "no such parameter in model".into())),
        }
    }
    let loaded: std::collections::BTreeSet<&String> = report.loaded.iter().collect();
    for (name, _) in store.iter_sorted() {
        if !loaded.contains(&name.to_string()) {
            report.missing.push(name.to_string());
        }
    }
    if strict && (!report.skipped.is_empty() || !report.missing.is_empty()) {
        let mut msg = String::from("strict load failed:");
        for (name, reason) in &report.skipped {
            msg.push_str(&format!("\n  skipped {name}: {reason}"));
        }
        for name in &report.missing {
            msg.push_str(&format!("\n  missing {name}"));
        }
        return Err(Error::Validation(msg));
    }
    Ok(report)
}

/// Initialize a model's store from a pretrained checkpoint on disk:
/// read the archive and apply every matching parameter.
pub fn load_pretrained(store: &mut ParamStore, path: &Path, strict: bool) -> Result<LoadReport> {
    let (_, entries) = read_checkpoint(path)?;
    load_into(store, &entries, strict)
}

/// Rebuild the model from a checkpoint and strictly load its parameters.
pub fn load_model(path: &Path) -> Result<(Model, ParamStore, CheckpointMeta)> {
    let (meta, entries) = read_checkpoint(path)?;
    let label_space = meta.label_space()?;
    let (model, mut store) = meta.model.build(meta.image_size, &label_space, 0)?;
    load_into(&mut store, &entries, true)?;
    Ok((model, store, meta))
}
