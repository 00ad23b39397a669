//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "PIXCKPT\0"
//! version   u32
//! hdr_len   u64
//! header    hdr_len bytes of JSON: { meta, tensors: [{name, shape, offset, len}] }
//! payload   f32 values, tensors back to back in header order
//! ```
//!
//! Tensor names carry their group as a prefix (`backbone/`, `projections/`,
//! `head/`). Values are stored as raw bits, so a save/load cycle is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LocalizationNet, ModelConfig, Part};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PIXCKPT\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Training stage that produced the weights (1 or 2).
    pub stage: u8,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub head_initialized: bool,
    pub model: ModelConfig,
    /// Resolved run configuration at save time.
    pub config: serde_json::Value,
    /// SHA-256 over the loss curve so far.
    pub loss_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(path: &Path, net: &LocalizationNet, meta: &CheckpointMeta) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    for part in Part::ALL {
        for (name, p) in net.named_params(part) {
            tensors.push(TensorEntry {
                name,
                shape: p.shape.clone(),
                offset,
                len: p.value.len(),
            });
            offset += p.value.len();
            for v in &p.value {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        tensors,
    })
    .map_err(|e| Error::Serde(e.to_string()))?;

    let mut bytes = Vec::with_capacity(20 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(LocalizationNet, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let hdr_end = 20usize.checked_add(hdr_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..hdr_end]).map_err(|e| bad(&e.to_string()))?;
    let payload = &bytes[hdr_end..];

    let mut net = LocalizationNet::new(header.meta.model.clone(), 0)?;
    let mut by_name: std::collections::HashMap<&str, &TensorEntry> =
        header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    for part in Part::ALL {
        let names: Vec<String> = net.named_params(part).into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(net.state_mut(part)) {
            let entry = by_name.remove(name.as_str()).ok_or_else(|| bad(&format!("missing tensor {name}")))?;
            if entry.shape != p.shape || entry.len != p.value.len() {
                return Err(bad(&format!("shape mismatch for {name}")));
            }
            let start = entry.offset * 4;
            let end = start + entry.len * 4;
            if end > payload.len() {
                return Err(bad(&format!("truncated payload for {name}")));
            }
            for (v, chunk) in p.value.iter_mut().zip(payload[start..end].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(bad(&format!("unexpected tensor {extra}")));
    }
    net.set_head_initialized(header.meta.head_initialized);
    Ok((net, header.meta))
}
