//! Single-file tensor checkpoint.
//!
//! Layout: magic `b"CMCCKPT1"`, header length `u32` LE, UTF-8 JSON header
//! `{metadata, tensors: [{name, shape, dtype, offset, len}]}`, then the
//! data section. `offset` and `len` are byte positions within the data
//! section; `dtype` is `"f64"` or `"f32"`, little endian. Tensors are
//! written as `f64` in name order.

use std::collections::BTreeMap;
use std::path::Path;

use cmc_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CMCCKPT1";
/// Upper bound on the JSON header; larger headers are rejected before allocation.
const MAX_HEADER: usize = 64 << 20;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub config_hash: String,
    pub epoch: u64,
    /// Free-form run state, e.g. model config, optimizer step, history.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: CheckpointMetadata,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    metadata: CheckpointMetadata,
    tensors: Vec<Entry>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = data.len();
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
                offset,
                len: data.len() - offset,
            });
        }
        let header = serde_json::to_vec(&Header { metadata: self.metadata.clone(), tensors: entries })
            .expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if header_len > MAX_HEADER || bytes.len() - 12 < header_len {
            return Err(corrupt(format!("header length {header_len} exceeds file")));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| corrupt(format!("invalid header: {e}")))?;
        let data = &bytes[12 + header_len..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let width = match e.dtype.as_str() {
                "f64" => 8,
                "f32" => 4,
                other => return Err(corrupt(format!("tensor {}: unsupported dtype {other}", e.name))),
            };
            let numel = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(width) == Some(e.len))
                .ok_or_else(|| corrupt(format!("tensor {}: shape {:?} disagrees with {} bytes", e.name, e.shape, e.len)))?;
            let end = e.offset.checked_add(e.len).filter(|&end| end <= data.len());
            let raw = &data[e.offset..end.ok_or_else(|| corrupt(format!("tensor {} lies outside the data section", e.name)))?];
            let values: Vec<f64> = match width {
                8 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                _ => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect(),
            };
            debug_assert_eq!(values.len(), numel);
            if tensors.insert(e.name.clone(), Tensor::new(&e.shape, values)).is_some() {
                return Err(corrupt(format!("duplicate tensor {}", e.name)));
            }
        }
        Ok(Self { metadata: header.metadata, tensors })
    }
}

/// Atomic write: the file appears complete or not at all.
pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, ckpt.encode())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    Checkpoint::decode(&std::fs::read(path)?)
}
