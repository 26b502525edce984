//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `ICLTOYCK`, a little-endian `u32` format
//! version, a `u32` length followed by that many bytes of JSON header
//! (model spec plus free-form metadata), a `u64` parameter count, then the
//! parameters as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Network;
use super::toy::{ModelSpec, ToyModel};
use crate::scoring::ScoreError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICLTOYCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn encode_checkpoint(model: &ToyModel, meta: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        spec: model.spec(),
        meta: meta.clone(),
    })
    .expect("header serializes");
    let params = model.params();
    let mut out = Vec::with_capacity(24 + header.len() + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<(ToyModel, serde_json::Value), ScoreError> {
    let bad = |m: &str| ScoreError::Model(format!("corrupt checkpoint: {m}"));
    let mut magic = [0u8; 8];
    bytes.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    bytes.read_exact(&mut u32buf).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(ScoreError::Model(format!("unsupported checkpoint version {version}")));
    }
    bytes.read_exact(&mut u32buf).map_err(|_| bad("truncated header length"))?;
    let hlen = u32::from_le_bytes(u32buf) as usize;
    if bytes.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[..hlen]).map_err(|e| bad(&e.to_string()))?;
    bytes = &bytes[hlen..];
    let mut u64buf = [0u8; 8];
    bytes.read_exact(&mut u64buf).map_err(|_| bad("truncated parameter count"))?;
    let n = u64::from_le_bytes(u64buf) as usize;
    if bytes.len() != n * 8 {
        return Err(bad("parameter block has the wrong size"));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header.spec.with_params(params)?, header.meta))
}

/// Writes atomically: a sibling temporary file is renamed into place.
pub fn save_checkpoint(path: &Path, model: &ToyModel, meta: &serde_json::Value) -> Result<(), ScoreError> {
    let io = |e: std::io::Error| ScoreError::Model(format!("writing {}: {e}", path.display()));
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode_checkpoint(model, meta)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(ToyModel, serde_json::Value), ScoreError> {
    let bytes = fs::read(path).map_err(|e| ScoreError::Model(format!("reading {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
