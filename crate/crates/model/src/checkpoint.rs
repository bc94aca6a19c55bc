//! Checkpoint container: magic, little-endian u32 format version, u64
//! header length, JSON header, then every tensor's values as little-endian
//! f64 in header order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::{ModelConfig, ModelParams, Tensor};

pub const MAGIC: &[u8; 8] = b"INMTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab_hash: Option<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Fingerprint of the vocabulary the embedding rows index.
    pub vocab_hash: Option<String>,
}

pub fn checkpoint_bytes(params: &ModelParams, vocab_hash: Option<&str>) -> Result<Vec<u8>> {
    let header = Header {
        config: params.config().clone(),
        vocab_hash: vocab_hash.map(str::to_string),
        tensors: params
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREFIX + json.len() + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Written to a sibling temporary file, then renamed into place.
pub fn save_checkpoint(params: &ModelParams, vocab_hash: Option<&str>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(params, vocab_hash)?;
    let io = |e| ModelError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| ModelError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_checkpoint(&bytes, path)
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |offset: usize, msg: String| ModelError::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt(0, "not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < PREFIX {
        return Err(corrupt(bytes.len(), "truncated prefix".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let data_start = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(PREFIX))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt(bytes.len(), format!("header of {hlen} bytes runs past end of file")))?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX..data_start])
        .map_err(|e| corrupt(PREFIX, format!("unreadable header: {e}")))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut pos = data_start;
    for entry in header.tensors {
        let n = entry
            .shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| corrupt(PREFIX, format!("tensor `{}` shape overflows", entry.name)))?;
        let end = n
            .checked_mul(8)
            .and_then(|b| b.checked_add(pos))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(bytes.len(), format!("data for tensor `{}` is truncated", entry.name)))?;
        let data = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((entry.name, Tensor { shape: entry.shape, data }));
        pos = end;
    }
    if pos != bytes.len() {
        return Err(corrupt(pos, format!("{} trailing bytes", bytes.len() - pos)));
    }
    let params = ModelParams::from_tensors(header.config, tensors).map_err(|e| corrupt(data_start, e.to_string()))?;
    Ok(Checkpoint {
        params,
        vocab_hash: header.vocab_hash,
    })
}
