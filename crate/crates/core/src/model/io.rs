//! Model file: `MMSENSE1` magic, u32-LE header length, JSON header, raw f32-LE parameter blob.

use super::{Model, ModelConfig, ModelError, Result};
use crate::dataio::ChannelStats;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"MMSENSE1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    params: Vec<ParamEntry>,
    checksum: u32,
    /// Per-channel input normalization the model was trained with.
    #[serde(default)]
    input_stats: Option<ChannelStats>,
}

/// A trained model together with the normalization its inputs expect.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: Model<f32>,
    pub input_stats: Option<ChannelStats>,
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model, None)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_saved(path)?.model)
}

pub fn save_saved(saved: &SavedModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(&saved.model, saved.input_stats.as_ref())?)?;
    Ok(())
}

pub fn load_saved(path: &Path) -> Result<SavedModel> {
    decode(&std::fs::read(path)?)
}

pub(crate) fn encode(model: &Model<f32>, input_stats: Option<&ChannelStats>) -> Result<Vec<u8>> {
    let params = model.parameters();
    let mut blob = Vec::with_capacity(4 * model.param_count());
    for (_, t) in &params {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: *model.config(),
        params: params.iter().map(|(n, t)| ParamEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        checksum: crc32fast::hash(&blob),
        input_stats: input_stats.cloned(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<SavedModel> {
    if bytes.len() < MAGIC.len() {
        return Err(ModelError::Truncated(format!("{} bytes, magic needs {}", bytes.len(), MAGIC.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(ModelError::Truncated("missing header length".into()));
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(ModelError::Truncated(format!("header declares {header_len} bytes, {} present", rest.len())));
    }
    let (json, blob) = rest.split_at(header_len);

    let raw: serde_json::Value = serde_json::from_slice(json).map_err(|e| ModelError::Header(e.to_string()))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| {
        ModelError::Header("missing format_version".into())
    })?;
    if version != FORMAT_VERSION as u64 {
        return Err(ModelError::VersionMismatch { found: version as u32, expected: FORMAT_VERSION });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| ModelError::Header(e.to_string()))?;

    let expected_len: usize = header.params.iter().map(|p| 4 * p.shape.iter().product::<usize>()).sum();
    if blob.len() < expected_len {
        return Err(ModelError::Truncated(format!("parameter blob has {} of {expected_len} bytes", blob.len())));
    }
    if blob.len() > expected_len {
        return Err(ModelError::Header(format!("{} trailing bytes after parameters", blob.len() - expected_len)));
    }
    let found = crc32fast::hash(blob);
    if found != header.checksum {
        return Err(ModelError::ChecksumMismatch { expected: header.checksum, found });
    }

    let mut model = Model::<f32>::zeros(header.config)?;
    let mut params = model.parameters_mut();
    if params.len() != header.params.len() {
        return Err(ModelError::Header(format!(
            "file lists {} parameters, architecture has {}",
            header.params.len(),
            params.len()
        )));
    }
    let mut offset = 0;
    for ((name, tensor), entry) in params.iter_mut().zip(&header.params) {
        if *name != entry.name || tensor.shape() != entry.shape.as_slice() {
            return Err(ModelError::Header(format!(
                "parameter {} {:?} does not match architecture {} {:?}",
                entry.name,
                entry.shape,
                name,
                tensor.shape()
            )));
        }
        for v in tensor.data_mut() {
            *v = f32::from_le_bytes(blob[offset..offset + 4].try_into().expect("4 bytes"));
            offset += 4;
        }
    }
    drop(params);
    Ok(SavedModel { model, input_stats: header.input_stats })
}
