//! `GUNT` checkpoint files.
//!
//! Layout: magic `GUNT`, `u32` LE version, the 32-byte model-config
//! fingerprint, a `u64` LE manifest length, the UTF-8 JSON manifest, then
//! each entry's values as raw little-endian floats at the manifest's offsets
//! (relative to the end of the manifest).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::hex;
use crate::model::{ModelConfig, ParamEntry, ParamKind, ParamStore};
use crate::tensor::{DType, Float, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"GUNT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: String,
    pub offset: u64,
    pub dtype: DType,
    pub shape: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub dtype: DType,
    pub entries: Vec<ManifestEntry>,
}

pub fn encode_checkpoint<T: Float>(store: &ParamStore<T>, config: &ModelConfig) -> Result<Vec<u8>> {
    if config.fingerprint() != store.fingerprint() {
        return Err(Error::Fingerprint {
            expected: hex(&store.fingerprint()),
            found: hex(&config.fingerprint()),
        });
    }
    let mut offset = 0u64;
    let entries = store
        .entries()
        .iter()
        .map(|e| {
            let m = ManifestEntry {
                name: e.name.clone(),
                kind: e.kind.tag().to_string(),
                offset,
                dtype: T::DTYPE,
                shape: e.tensor.shape().dims(),
            };
            offset += (e.tensor.numel() * T::DTYPE.size_of()) as u64;
            m
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        config: config.clone(),
        dtype: T::DTYPE,
        entries,
    })
    .expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&store.fingerprint());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for e in store.entries() {
        T::write_le(e.tensor.data(), &mut out);
    }
    Ok(out)
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint<T: Float>(store: &ParamStore<T>, config: &ModelConfig, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(store, config)?;
    let tmp = path.with_extension("gunt.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parsed header and manifest plus the payload offset.
pub fn read_manifest(bytes: &[u8], path: &Path) -> Result<([u8; 32], Manifest, usize)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(format_err(path, "not a GUNT checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let fingerprint: [u8; 32] = bytes[8..40].try_into().unwrap();
    let len = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    let end = HEADER_LEN
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err(path, "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..end])
        .map_err(|e| format_err(path, format!("bad manifest: {e}")))?;
    if manifest.config.fingerprint() != fingerprint {
        return Err(format_err(path, "manifest config does not match the header fingerprint"));
    }
    Ok((fingerprint, manifest, end))
}

/// Model configuration stored in a checkpoint.
pub fn checkpoint_config(path: &Path) -> Result<ModelConfig> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(read_manifest(&bytes, path)?.1.config)
}

fn decode<T: Float>(bytes: &[u8], path: &Path, expected: [u8; 32]) -> Result<ParamStore<T>> {
    let (fingerprint, manifest, start) = read_manifest(bytes, path)?;
    if fingerprint != expected {
        return Err(Error::Fingerprint {
            expected: hex(&expected),
            found: hex(&fingerprint),
        });
    }
    let payload = &bytes[start..];
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for m in &manifest.entries {
        let [n, c, h, w] = m.shape;
        let shape = Shape::new(n, c, h, w);
        let len = shape.numel() * m.dtype.size_of();
        let at = m.offset as usize;
        let raw = payload
            .get(at..at.checked_add(len).ok_or_else(|| format_err(path, "bad offset"))?)
            .ok_or_else(|| format_err(path, format!("entry `{}` extends past the end of file", m.name)))?;
        let data: Vec<T> = match m.dtype {
            DType::F32 => f32::read_le(raw).into_iter().map(|v| T::c(v as f64)).collect(),
            DType::F64 => f64::read_le(raw).into_iter().map(T::c).collect(),
        };
        let kind = ParamKind::from_tag(&m.kind)
            .ok_or_else(|| format_err(path, format!("unknown parameter kind `{}`", m.kind)))?;
        entries.push(ParamEntry {
            name: m.name.clone(),
            kind,
            tensor: Tensor::from_vec(shape, data)?,
        });
    }
    ParamStore::from_entries(fingerprint, entries)
}

/// Loads values into `store`. Nothing is modified unless the fingerprint
/// and the full parameter layout match.
pub fn load_checkpoint<T: Float>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let loaded = decode(&bytes, path, store.fingerprint())?;
    store.copy_values_from(&loaded)
}
