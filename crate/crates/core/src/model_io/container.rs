//! `CSC1` tensor container.
//!
//! ```text
//! offset 0   magic          b"CSC1"
//! offset 4   header_len     u64, little-endian
//! offset 12  header         UTF-8 JSON, padded with spaces so the payload
//!                           starts on an 8-byte boundary
//! ...        payload        raw little-endian tensor data
//! ```
//!
//! The header is a JSON object whose keys are sorted. Each tensor entry is
//! `{"dtype": "f32"|"f64", "shape": [..], "offset": n}` with `offset`
//! relative to the payload start and a multiple of 8. Tensors are laid out in
//! key order, each padded with zero bytes to the next 8-byte boundary. The
//! reserved key `__config__` holds arbitrary JSON (a model config or score
//! metadata) instead of a tensor entry.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const MAGIC: &[u8; 4] = b"CSC1";
pub const CONFIG_KEY: &str = "__config__";
const PREAMBLE: usize = 12;
const ALIGN: usize = 8;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub config: Option<Value>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn dtype_width(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(Error::UnknownDtype(other.to_string())),
    }
}

fn pad_to(len: usize, align: usize) -> usize {
    len.div_ceil(align) * align
}

/// Raw little-endian bytes of a tensor in its storage precision.
pub fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    match t.precision() {
        Precision::F32 => t.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        Precision::F64 => t.data().iter().flat_map(|&v| v.to_le_bytes()).collect(),
    }
}

/// Hex SHA-256 of [`tensor_bytes`].
pub fn tensor_checksum(t: &Tensor) -> String {
    hex_digest(&tensor_bytes(t))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.tensors.contains_key(CONFIG_KEY) {
            return Err(Error::Inconsistent(format!("{CONFIG_KEY} is reserved")));
        }
        let mut header = serde_json::Map::new();
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            let entry = Entry {
                dtype: t.precision().name().to_string(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            };
            header.insert(name.clone(), serde_json::to_value(entry)?);
            payload.extend(tensor_bytes(t));
            payload.resize(pad_to(payload.len(), ALIGN), 0);
        }
        if let Some(cfg) = &self.config {
            header.insert(CONFIG_KEY.to_string(), cfg.clone());
        }
        let mut header = serde_json::to_vec(&Value::Object(header))?;
        header.resize(pad_to(PREAMBLE + header.len(), ALIGN) - PREAMBLE, b' ');

        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < PREAMBLE {
            return Err(Error::Truncated("missing header length".into()));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(PREAMBLE))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Truncated(format!("header of {header_len} bytes past end of file")))?;
        let header: serde_json::Map<String, Value> = serde_json::from_slice(&bytes[PREAMBLE..header_end])?;
        let payload = &bytes[header_end..];

        let mut config = None;
        let mut spans = Vec::new();
        let mut tensors = BTreeMap::new();
        for (name, value) in header {
            if name == CONFIG_KEY {
                config = Some(value);
                continue;
            }
            let entry: Entry =
                serde_json::from_value(value).map_err(|e| Error::Inconsistent(format!("entry {name}: {e}")))?;
            let width = dtype_width(&entry.dtype)?;
            let offset = usize::try_from(entry.offset)
                .map_err(|_| Error::Truncated(format!("{name}: offset {} past end", entry.offset)))?;
            if offset % ALIGN != 0 {
                return Err(Error::Inconsistent(format!(
                    "{name}: offset {offset} not 8-byte aligned"
                )));
            }
            let numel = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Inconsistent(format!("{name}: shape {:?} overflows", entry.shape)))?;
            let size = numel
                .checked_mul(width)
                .ok_or_else(|| Error::Inconsistent(format!("{name}: size overflows")))?;
            let end = offset
                .checked_add(size)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| {
                    Error::Truncated(format!(
                        "{name}: bytes {offset}..+{size} past payload of {}",
                        payload.len()
                    ))
                })?;
            let raw = &payload[offset..end];
            let (data, precision): (Vec<f64>, _) = if width == 4 {
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect();
                (data, Precision::F32)
            } else {
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                (data, Precision::F64)
            };
            let tensor =
                Tensor::new(entry.shape, data, precision).map_err(|e| Error::Inconsistent(format!("{name}: {e}")))?;
            spans.push((offset, end, name.clone()));
            tensors.insert(name, tensor);
        }
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Inconsistent(format!(
                    "tensors {} and {} overlap",
                    pair[0].2, pair[1].2
                )));
            }
        }
        Ok(Container { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
