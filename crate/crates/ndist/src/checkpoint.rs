//! Versioned binary checkpoint container.
//!
//! Layout: 6-byte magic `NDKPT1`, a little-endian u64 manifest length, a
//! JSON manifest (kind, config fingerprint, embedded config, tensor table),
//! then the raw tensor payloads as little-endian scalars in manifest order.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NdistError, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 6] = b"NDKPT1";

/// Content hash of any serializable config; ties artifacts to the exact
/// settings that produced them.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value)
        .map_err(|e| NdistError::invalid("fingerprint", e.to_string()))?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(hex(&hasher.finalize()))
}

/// Hash of an already-serialized config; matches [`fingerprint`] when the
/// bytes are exactly the struct's JSON serialization.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    config_fingerprint: String,
    config_json: String,
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: named tensors plus identifying metadata.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config_fingerprint: String,
    pub config_json: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn dtype_name(dt: DType) -> Result<&'static str> {
    match dt {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(NdistError::invalid(
            "checkpoint",
            format!("unsupported dtype {other:?}"),
        )),
    }
}

fn dtype_from_name(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(NdistError::invalid(
            "checkpoint",
            format!("unknown dtype tag {other:?}"),
        )),
    }
}

impl Checkpoint {
    /// Capture all parameters of a store.
    pub fn from_store(
        store: &ParamStore,
        kind: &str,
        config_fingerprint: &str,
        config_json: &str,
    ) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: kind.to_string(),
            config_fingerprint: config_fingerprint.to_string(),
            config_json: config_json.to_string(),
            meta: BTreeMap::new(),
            tensors: store.export_values()?,
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Checkpoint {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// Copy the stored tensors into an existing store; shapes must match.
    pub fn load_into(&self, store: &ParamStore) -> Result<()> {
        store.load_values(&self.tensors)
    }

    /// Reject a checkpoint produced under a different config.
    pub fn check_fingerprint(&self, expected: &str) -> Result<()> {
        if self.config_fingerprint != expected {
            return Err(NdistError::invalid(
                "checkpoint",
                format!(
                    "config fingerprint mismatch: checkpoint {}, expected {}",
                    self.config_fingerprint, expected
                ),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload: Vec<u8> = Vec::new();
        for (name, t) in &self.tensors {
            let t = t.contiguous()?;
            let offset = payload.len() as u64;
            match t.dtype() {
                DType::F32 => {
                    for v in t.flatten_all()?.to_vec1::<f32>()? {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
                DType::F64 => {
                    for v in t.flatten_all()?.to_vec1::<f64>()? {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
                other => {
                    return Err(NdistError::invalid(
                        "checkpoint",
                        format!("unsupported dtype {other:?} for {name}"),
                    ))
                }
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.dims().to_vec(),
                dtype: dtype_name(t.dtype())?.to_string(),
                offset,
                byte_len: payload.len() as u64 - offset,
            });
        }
        let manifest = Manifest {
            kind: self.kind.clone(),
            config_fingerprint: self.config_fingerprint.clone(),
            config_json: self.config_json.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let manifest_bytes = serde_json::to_vec(&manifest)
            .map_err(|e| NdistError::invalid("checkpoint save", e.to_string()))?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&manifest_bytes)?;
        f.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Checkpoint> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 6];
        f.read_exact(&mut magic)
            .map_err(|_| NdistError::invalid("checkpoint load", "file too short"))?;
        if &magic != MAGIC {
            return Err(NdistError::invalid(
                "checkpoint load",
                format!("bad magic {magic:?}"),
            ));
        }
        let mut len_bytes = [0u8; 8];
        f.read_exact(&mut len_bytes)
            .map_err(|_| NdistError::invalid("checkpoint load", "truncated manifest length"))?;
        let manifest_len = u64::from_le_bytes(len_bytes) as usize;
        let mut manifest_bytes = vec![0u8; manifest_len];
        f.read_exact(&mut manifest_bytes)
            .map_err(|_| NdistError::invalid("checkpoint load", "truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| NdistError::invalid("checkpoint load", e.to_string()))?;
        let mut payload = Vec::new();
        f.read_to_end(&mut payload)?;
        let mut tensors = BTreeMap::new();
        for entry in &manifest.tensors {
            let dt = dtype_from_name(&entry.dtype)?;
            let start = entry.offset as usize;
            let end = start + entry.byte_len as usize;
            if end > payload.len() {
                return Err(NdistError::invalid(
                    "checkpoint load",
                    format!("payload truncated at tensor {}", entry.name),
                ));
            }
            let bytes = &payload[start..end];
            let t = match dt {
                DType::F32 => {
                    let vals: Vec<f32> = bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(vals, entry.shape.as_slice(), device)?
                }
                DType::F64 => {
                    let vals: Vec<f64> = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(vals, entry.shape.as_slice(), device)?
                }
                _ => unreachable!(),
            };
            tensors.insert(entry.name.clone(), t);
        }
        Ok(Checkpoint {
            kind: manifest.kind,
            config_fingerprint: manifest.config_fingerprint,
            config_json: manifest.config_json,
            meta: manifest.meta,
            tensors,
        })
    }
}

/// Serialized record of a speaker conditioning vector: where it came from
/// and the sampled values, small enough to embed in run metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpeakerRecord {
    /// "prior" with the generating seed, or "reference" from an encoded WAV.
    pub source: String,
    pub seed: Option<u64>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl SpeakerRecord {
    pub fn from_prior(seed: u64, values: Vec<f64>) -> SpeakerRecord {
        SpeakerRecord {
            source: "prior".into(),
            seed: Some(seed),
            dim: values.len(),
            values,
        }
    }

    pub fn from_reference(values: Vec<f64>) -> SpeakerRecord {
        SpeakerRecord {
            source: "reference".into(),
            seed: None,
            dim: values.len(),
            values,
        }
    }
}
