//! Checkpoint container: a JSON manifest followed by a blob of little-endian
//! `f32` values.
//!
//! ```text
//! offset 0   magic            8 bytes  "RFLOWCK\0"
//! offset 8   manifest length  u64 LE
//! offset 16  manifest         UTF-8 JSON
//!            blob             little-endian f32, tensors back to back
//! ```
//!
//! The manifest lists each tensor's name, shape, byte offset into the blob and
//! element count, the total blob size, a format version, and free-form
//! metadata. Metadata is held as a `serde_json::Value`, whose maps are sorted,
//! so loading and re-saving reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RFLOWCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: needs {needed} bytes, file has {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("manifest and blob disagree: {0}")]
    LengthMismatch(String),
    #[error("checkpoint lacks tensor `{0}`")]
    MissingTensor(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    blob_bytes: u64,
    tensors: Vec<TensorRecord>,
    metadata: serde_json::Value,
}

/// Named tensors plus metadata, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            tensors: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let len = t.numel() as u64;
            records.push(TensorRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len,
            });
            offset += 4 * len;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            blob_bytes: offset,
            tensors: records,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serialises");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let available = bytes.len() as u64;
        if bytes.len() < 16 {
            return Err(if bytes.len() >= 8 && &bytes[..8] != MAGIC {
                CheckpointError::BadMagic
            } else {
                CheckpointError::Truncated { needed: 16, available }
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = 16u64
            .checked_add(mlen)
            .ok_or_else(|| CheckpointError::Manifest("manifest length overflows".into()))?;
        if header_end > available {
            return Err(CheckpointError::Truncated {
                needed: header_end,
                available,
            });
        }
        let header_end = header_end as usize;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let blob = &bytes[header_end..];
        let needed = header_end as u64 + manifest.blob_bytes;
        if (blob.len() as u64) < manifest.blob_bytes {
            return Err(CheckpointError::Truncated { needed, available });
        }
        if blob.len() as u64 != manifest.blob_bytes {
            return Err(CheckpointError::LengthMismatch(format!(
                "manifest declares {} blob bytes, file carries {}",
                manifest.blob_bytes,
                blob.len()
            )));
        }
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for rec in manifest.tensors {
            let numel: u64 = rec.shape.iter().map(|&d| d as u64).product();
            if numel != rec.len || rec.shape.iter().any(|&d| d == 0) {
                return Err(CheckpointError::LengthMismatch(format!(
                    "`{}` has shape {:?} but length {}",
                    rec.name, rec.shape, rec.len
                )));
            }
            if rec.offset != expected_offset {
                return Err(CheckpointError::LengthMismatch(format!(
                    "`{}` starts at byte {} but should start at {expected_offset}",
                    rec.name, rec.offset
                )));
            }
            let end = rec.offset + 4 * rec.len;
            if end > manifest.blob_bytes {
                return Err(CheckpointError::LengthMismatch(format!(
                    "`{}` runs past the end of the blob",
                    rec.name
                )));
            }
            let data: Vec<f32> = blob[rec.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected_offset = end;
            tensors.push((rec.name, Tensor::from_parts(rec.shape, data)));
        }
        if expected_offset != manifest.blob_bytes {
            return Err(CheckpointError::LengthMismatch(format!(
                "tensors cover {expected_offset} of {} blob bytes",
                manifest.blob_bytes
            )));
        }
        Ok(Self {
            tensors,
            metadata: manifest.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
