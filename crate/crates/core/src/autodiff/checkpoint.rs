//! Checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SACTICKP"
//! 8       4     format version (u32, currently 1)
//! 12      8     header length H in bytes (u64)
//! 20      H     UTF-8 JSON header
//! 20+H    ...   payload: f64 arrays, little-endian, back to back
//! ```
//!
//! The header carries `format_version`, `seed`, `step`, a free-form `config`
//! echo, free-form `metadata`, and a `tensors` manifest. Each manifest entry
//! has `name`, `role` (`value`, `adam_m` or `adam_v`), `shape`, `dtype`
//! (always `"f64"`), `offset` (bytes from the start of the payload) and `len`
//! (element count). Entries are sorted by name then role, and the payload
//! must be covered exactly, with no gaps and no trailing bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Parameter, ParameterStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SACTICKP";
pub const FORMAT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 20;
const ROLES: [&str; 3] = ["value", "adam_m", "adam_v"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("checkpoint truncated: {0}")]
    Truncated(&'static str),
    #[error("invalid checkpoint header: {0}")]
    Header(String),
    #[error("invalid tensor entry `{name}`: {reason}")]
    Entry { name: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    seed: u64,
    step: u64,
    config: serde_json::Value,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A parameter store plus the configuration needed to rebuild its model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub metadata: serde_json::Value,
    pub store: ParameterStore,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (name, p) in self.store.iter() {
            for (role, data) in ROLES.iter().zip([p.value.data(), &p.moment1, &p.moment2]) {
                tensors.push(TensorEntry {
                    name: name.to_string(),
                    role: role.to_string(),
                    shape: p.value.shape().to_vec(),
                    dtype: "f64".into(),
                    offset: payload.len() as u64,
                    len: data.len() as u64,
                });
                for v in data {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            seed: self.store.seed(),
            step: self.store.step(),
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < PREFIX_LEN {
            return Err(CheckpointError::Truncated("prefix"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let rest = &bytes[PREFIX_LEN..];
        if header_len > rest.len() as u64 {
            return Err(CheckpointError::Truncated("header"));
        }
        let (header_bytes, payload) = rest.split_at(header_len as usize);
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.format_version != version {
            return Err(CheckpointError::Header(format!(
                "header version {} disagrees with prefix version {version}",
                header.format_version
            )));
        }

        let mut store = ParameterStore::new(header.seed);
        store.set_step(header.step);
        let mut expected_offset = 0u64;
        let mut chunks = header.tensors.chunks(3);
        for group in chunks.by_ref() {
            let name = &group[0].name;
            let bad = |reason: String| CheckpointError::Entry {
                name: name.clone(),
                reason,
            };
            if group.len() != 3 {
                return Err(bad("missing optimizer state entries".into()));
            }
            let mut arrays = Vec::with_capacity(3);
            for (entry, role) in group.iter().zip(ROLES) {
                if &entry.name != name || entry.role != role {
                    return Err(bad(format!(
                        "expected role `{role}`, found `{}` for `{}`",
                        entry.role, entry.name
                    )));
                }
                if entry.dtype != "f64" {
                    return Err(bad(format!("unsupported dtype `{}`", entry.dtype)));
                }
                if entry.shape != group[0].shape {
                    return Err(bad("shape differs between roles".into()));
                }
                let numel = entry
                    .shape
                    .iter()
                    .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                    .ok_or_else(|| bad("shape overflows".into()))?;
                if numel != entry.len || numel == 0 {
                    return Err(bad(format!(
                        "length {} does not match shape {:?}",
                        entry.len, entry.shape
                    )));
                }
                if entry.offset != expected_offset {
                    return Err(bad(format!(
                        "offset {} where {expected_offset} was expected",
                        entry.offset
                    )));
                }
                let end = entry
                    .len
                    .checked_mul(8)
                    .and_then(|n| n.checked_add(entry.offset))
                    .filter(|&end| end <= payload.len() as u64)
                    .ok_or(CheckpointError::Truncated("payload"))?;
                let raw = &payload[entry.offset as usize..end as usize];
                arrays.push(
                    raw.chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect::<Vec<_>>(),
                );
                expected_offset = end;
            }
            if store.contains(name) {
                return Err(bad("duplicate parameter".into()));
            }
            let moment2 = arrays.pop().expect("three arrays");
            let moment1 = arrays.pop().expect("three arrays");
            let values = arrays.pop().expect("three arrays");
            let value = Tensor::new(group[0].shape.clone(), values)
                .map_err(|e| bad(e.to_string()))?;
            let grad = vec![0.0; value.numel()];
            store.insert_parameter(
                name.clone(),
                Parameter {
                    value,
                    grad,
                    moment1,
                    moment2,
                },
            );
        }
        if expected_offset != payload.len() as u64 {
            return Err(CheckpointError::Header(format!(
                "{} trailing payload bytes",
                payload.len() as u64 - expected_offset
            )));
        }
        Ok(Checkpoint {
            config: header.config,
            metadata: header.metadata,
            store,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::decode(&fs::read(path)?)
    }
}
