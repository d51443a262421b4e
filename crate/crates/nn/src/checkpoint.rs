//! Checkpoint file: `"HGTC1"`, u32-LE version, u32-LE manifest length, UTF-8
//! JSON manifest, then the little-endian `f32` blob. Manifest offsets are
//! byte offsets into the blob.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{NnError, ParamStore, Result, Tensor};

pub const MAGIC: &[u8; 5] = b"HGTC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: Vec<ManifestEntry>,
    /// Free-form model description (configuration, vocabularies).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: Option<serde_json::Value>,
}

pub fn encode_checkpoint(params: &ParamStore, meta: Option<&serde_json::Value>) -> Vec<u8> {
    let mut entries = Vec::with_capacity(params.len());
    let mut blob = Vec::with_capacity(params.numel() * 4);
    for (name, t) in params.iter() {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".to_string(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        params: entries,
        meta: meta.cloned(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(13 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::CorruptManifest(msg.into())
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| corrupt("header truncated"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = read_u32(bytes, 5)?;
    if version != VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let mlen = read_u32(bytes, 9)? as usize;
    let json = bytes
        .get(13..13 + mlen)
        .ok_or_else(|| corrupt("manifest truncated"))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("invalid manifest JSON: {e}")))?;
    let blob = &bytes[13 + mlen..];

    let mut names = HashSet::new();
    let mut next_free = 0u64;
    let mut params = ParamStore::new();
    for e in &manifest.params {
        if !names.insert(e.name.as_str()) {
            return Err(corrupt(format!("duplicate parameter {}", e.name)));
        }
        if e.dtype != "f32" {
            return Err(corrupt(format!(
                "unsupported dtype {} for {}",
                e.dtype, e.name
            )));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return Err(corrupt(format!(
                "invalid shape {:?} for {}",
                e.shape, e.name
            )));
        }
        if e.offset < next_free || e.offset % 4 != 0 {
            return Err(corrupt(format!(
                "offset {} of {} overlaps or is misaligned",
                e.offset, e.name
            )));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n as u64;
        if end > blob.len() as u64 {
            return Err(corrupt(format!(
                "blob truncated: {} needs bytes up to {end}, blob has {}",
                e.name,
                blob.len()
            )));
        }
        let data = blob[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        next_free = end;
    }
    if next_free != blob.len() as u64 {
        return Err(corrupt(format!(
            "{} trailing bytes after the last parameter",
            blob.len() as u64 - next_free
        )));
    }
    Ok(Checkpoint {
        params,
        meta: manifest.meta,
    })
}

pub fn save_checkpoint(
    params: &ParamStore,
    meta: Option<&serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
