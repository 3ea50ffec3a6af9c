//! Checkpoint directories: `model.json` (kind, configuration, vocabulary,
//! parameter registry, batch-norm running statistics) plus `params.bin`, the
//! parameters as little-endian `f64` in registry order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ctc::GlossVocabulary;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct NormEntry {
    name: String,
    mean: Vec<f64>,
    var: Vec<f64>,
    initialized: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    model_kind: ModelKind,
    config: serde_json::Value,
    vocab: Vec<String>,
    params: Vec<Entry>,
    norm_states: Vec<NormEntry>,
}

pub fn save(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = match &model.config {
        ModelConfig::Conformer(c) => serde_json::to_value(c),
        ModelConfig::Fusion(c) => serde_json::to_value(c),
    }
    .expect("configs serialize");
    let mut params = Vec::new();
    let mut blob = Vec::with_capacity(model.params.scalar_count() * 8);
    let mut offset = 0;
    for (name, p) in model.params.iter() {
        params.push(Entry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.len();
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let norm_states = model
        .params
        .norm_states()
        .map(|(name, s)| NormEntry {
            name: name.to_string(),
            mean: s.mean.clone(),
            var: s.var.clone(),
            initialized: s.initialized,
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_kind: model.kind(),
        config,
        vocab: model.vocab.tokens().to_vec(),
        params,
        norm_states,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, blob).map_err(|e| Error::io(&path, e))
}

pub fn load(dir: &Path) -> Result<Model> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |m: String| Error::Config(format!("{}: {m}", path.display()));
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {}", manifest.format_version)));
    }
    let config = match manifest.model_kind {
        ModelKind::ConformerSi => serde_json::from_value(manifest.config).map(ModelConfig::Conformer),
        ModelKind::FusionUs => serde_json::from_value(manifest.config).map(ModelConfig::Fusion),
    }
    .map_err(|e| bad(e.to_string()))?;
    let vocab = GlossVocabulary::new(manifest.vocab)?;
    let mut model = Model::new(config, vocab, 0)?;

    let blob_path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(bad("parameter blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if manifest.params.len() != model.params.len() {
        return Err(bad(format!(
            "registry lists {} parameters, the model has {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    for entry in &manifest.params {
        let p = model
            .params
            .get_mut(&entry.name)
            .ok_or_else(|| bad(format!("unexpected parameter {}", entry.name)))?;
        if p.value.shape() != entry.shape.as_slice() {
            return Err(bad(format!(
                "parameter {} has shape {:?}, the model expects {:?}",
                entry.name,
                entry.shape,
                p.value.shape()
            )));
        }
        let n = p.value.len();
        let src = values
            .get(entry.offset..entry.offset + n)
            .ok_or_else(|| bad(format!("parameter {} runs past the blob", entry.name)))?;
        p.value.data_mut().copy_from_slice(src);
    }
    for entry in manifest.norm_states {
        let s = model
            .params
            .norm_state_mut(&entry.name)
            .ok_or_else(|| bad(format!("unexpected batch-norm state {}", entry.name)))?;
        if s.mean.len() != entry.mean.len() || s.var.len() != entry.var.len() {
            return Err(bad(format!("batch-norm state {} has the wrong width", entry.name)));
        }
        s.mean = entry.mean;
        s.var = entry.var;
        s.initialized = entry.initialized;
    }
    Ok(model)
}
