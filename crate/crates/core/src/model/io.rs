//! Model file: little-endian, self-describing.
//!
//! ```text
//! magic      8 bytes  "GZCKMDL\0"
//! version    u32
//! meta_len   u32
//! meta       meta_len bytes of JSON {arch, scaler, meta}
//! n_params   u64
//! params     n_params x f32
//! digest     32 bytes SHA-256 of everything above
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{ArchConfig, ParamLayout};
use super::{ModelError, ModelMeta, ModelParams};
use crate::features::RobustScaler;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GZCKMDL\0";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    scaler: RobustScaler,
    meta: ModelMeta,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Corrupt(msg.into())
}

pub fn write_model<W: Write>(mut w: W, model: &ModelParams) -> Result<(), ModelError> {
    let layout = ParamLayout::new(&model.arch)?;
    if layout.total != model.weights.len() {
        return Err(ModelError::Shape(format!("architecture needs {} parameters, got {}", layout.total, model.weights.len())));
    }
    if let Some(i) = model.weights.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite(format!("parameter {i}")));
    }
    let header = Header { arch: model.arch.clone(), scaler: model.scaler, meta: model.meta.clone() };
    let meta = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    let meta_len = u32::try_from(meta.len()).map_err(|_| corrupt("metadata too large"))?;

    let mut buf = Vec::with_capacity(24 + meta.len() + 4 * model.weights.len() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&meta_len.to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(model.weights.len() as u64).to_le_bytes());
    for v in &model.weights {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelParams, ModelError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 16 + 8 + DIGEST_LEN {
        return Err(corrupt("file truncated"));
    }
    if &buf[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
    let meta_len = u32_at(12) as usize;
    let meta_end = 16usize.checked_add(meta_len).filter(|&e| e + 8 <= body.len()).ok_or_else(|| corrupt("file truncated"))?;
    let n = u64::from_le_bytes(body[meta_end..meta_end + 8].try_into().unwrap());
    let expected = (meta_end as u64 + 8).checked_add(n.checked_mul(4).ok_or_else(|| corrupt("bad parameter count"))?);
    if expected != Some(body.len() as u64) {
        return Err(corrupt("file truncated or has trailing bytes"));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let header: Header = serde_json::from_slice(&body[16..meta_end]).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let weights: Vec<f32> = body[meta_end + 8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let layout = ParamLayout::new(&header.arch)?;
    if layout.total != weights.len() {
        return Err(corrupt(format!("architecture needs {} parameters, file has {}", layout.total, weights.len())));
    }
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite parameter"));
    }
    Ok(ModelParams { arch: header.arch, weights, scaler: header.scaler, meta: header.meta })
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelParams) -> Result<(), ModelError> {
    let mut bytes = Vec::new();
    write_model(&mut bytes, model)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams, ModelError> {
    read_model(std::fs::File::open(path)?)
}
