//! Binary checkpoints.
//!
//! Layout: magic `VGCMCKPT`, u32 format version, u64 header length, a JSON
//! header, then every parameter as little-endian f64 in manifest order,
//! then (when present) the optimizer moments in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Vgcm};
use crate::error::{Error, Result};
use crate::tensor::{Mat, ParamStore};

const MAGIC: &[u8; 8] = b"VGCMCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Free-form run metadata (training config, ablations, seed).
    pub metadata: serde_json::Value,
    pub epoch: u64,
    pub step: u64,
    pub manifest: Vec<ManifestEntry>,
    /// Update count of the stored optimizer state, if any.
    pub optimizer_t: Option<u64>,
}

/// Optimizer moments carried by a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Vgcm,
    pub optimizer: Option<OptimizerState>,
}

fn push_mats<'a>(out: &mut Vec<u8>, mats: impl Iterator<Item = &'a Mat>) {
    for m in mats {
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(
    model: &Vgcm,
    metadata: serde_json::Value,
    epoch: u64,
    step: u64,
    optimizer: Option<&OptimizerState>,
) -> Vec<u8> {
    let manifest = model.params().iter().map(|(_, n, m)| ManifestEntry { name: n.to_string(), rows: m.rows(), cols: m.cols() }).collect();
    let header = CheckpointHeader { model: model.config().clone(), metadata, epoch, step, manifest, optimizer_t: optimizer.map(|o| o.t) };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_mats(&mut out, model.params().iter().map(|(_, _, m)| m));
    if let Some(o) = optimizer {
        push_mats(&mut out, o.m.iter());
        push_mats(&mut out, o.v.iter());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", origin.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
    let fresh = Vgcm::new(header.model.clone())?;
    if fresh.params().len() != header.manifest.len() {
        return Err(bad(format!("manifest lists {} tensors, model expects {}", header.manifest.len(), fresh.params().len())));
    }
    for ((_, name, m), entry) in fresh.params().iter().zip(&header.manifest) {
        if name != entry.name || m.shape() != (entry.rows, entry.cols) {
            return Err(bad(format!(
                "manifest entry {} {}×{} does not match {} {}×{}",
                entry.name,
                entry.rows,
                entry.cols,
                name,
                m.rows(),
                m.cols()
            )));
        }
    }
    let numel: usize = header.manifest.iter().map(|e| e.rows * e.cols).sum();
    let blocks = if header.optimizer_t.is_some() { 3 } else { 1 };
    let data = &bytes[20 + hlen..];
    if data.len() != blocks * numel * 8 {
        return Err(bad(format!("expected {} data bytes, found {}", blocks * numel * 8, data.len())));
    }
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut read_block = || -> Vec<Mat> {
        header.manifest.iter().map(|e| Mat::from_vec(e.rows, e.cols, values.by_ref().take(e.rows * e.cols).collect())).collect()
    };
    let mut params = ParamStore::new();
    for (e, m) in header.manifest.iter().zip(read_block()) {
        params.add(e.name.clone(), m);
    }
    let optimizer = header.optimizer_t.map(|t| OptimizerState { t, m: read_block(), v: read_block() });
    let model = Vgcm::from_params(header.model.clone(), params)?;
    Ok(Checkpoint { header, model, optimizer })
}

pub fn save_checkpoint(
    path: &Path,
    model: &Vgcm,
    metadata: serde_json::Value,
    epoch: u64,
    step: u64,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, metadata, epoch, step, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
