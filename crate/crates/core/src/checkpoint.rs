//! Binary checkpoint format: `CSADV001`, a little-endian `u64` header length,
//! a JSON header (model config, vocabulary, parameter manifest), then every
//! parameter as little-endian `f32` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::model::{ModelConfig, Params};
use crate::text::Vocab;

pub const MAGIC: &[u8; 8] = b"CSADV001";

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    config_hash: String,
    vocab: Vocab,
    manifest: Vec<ManifestEntry>,
}

/// A trained model together with the vocabulary it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Params,
    pub vocab: Vocab,
}

/// Hex SHA-256 of the canonical JSON form of `config`.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// Short content id of a serialized checkpoint.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

impl Checkpoint {
    pub fn new(params: Params, vocab: Vocab) -> Result<Self> {
        if vocab.len() != params.config().vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                params.config().vocab_size
            )));
        }
        Ok(Self { params, vocab })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = self.params.config();
        let header = Header {
            model: config.clone(),
            config_hash: config_hash(config),
            vocab: self.vocab.clone(),
            manifest: self
                .params
                .tensors()
                .iter()
                .map(|t| ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(CheckpointError::Truncated(format!("{} bytes, no magic", bytes.len())).into());
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::Version {
                found: bytes[..8].to_vec(),
                expected: "CSADV001",
            }
            .into());
        }
        let len_bytes: [u8; 8] = bytes
            .get(8..16)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| CheckpointError::Truncated("missing header length".into()))?;
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
            .map_err(|_| CheckpointError::Header("header length overflows".into()))?;
        let body = &bytes[16..];
        if header_len > body.len() {
            return Err(CheckpointError::Truncated(format!(
                "header needs {header_len} bytes, {} remain",
                body.len()
            ))
            .into());
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.config_hash != config_hash(&header.model) {
            return Err(CheckpointError::Header("config hash does not match the model config".into()).into());
        }
        if header.vocab.len() != header.model.vocab_size {
            return Err(CheckpointError::Header(format!(
                "vocabulary has {} tokens, config says {}",
                header.vocab.len(),
                header.model.vocab_size
            ))
            .into());
        }
        header.model.validate()?;
        // Validate names and shapes before reading any values.
        let expected = Params::zeros(&header.model)?;
        if expected.tensors().len() != header.manifest.len() {
            return Err(CheckpointError::Manifest(format!(
                "expected {} tensors, manifest lists {}",
                expected.tensors().len(),
                header.manifest.len()
            ))
            .into());
        }
        for (want, got) in expected.tensors().iter().zip(&header.manifest) {
            if want.name != got.name {
                return Err(CheckpointError::Manifest(format!(
                    "expected parameter {}, found {}",
                    want.name, got.name
                ))
                .into());
            }
            if want.shape != got.shape {
                return Err(CheckpointError::Shape {
                    name: got.name.clone(),
                    expected: want.shape.clone(),
                    found: got.shape.clone(),
                }
                .into());
            }
        }
        let mut data = &body[header_len..];
        let needed: usize = 4 * expected.count();
        if data.len() < needed {
            return Err(CheckpointError::Truncated(format!(
                "parameters need {needed} bytes, {} remain",
                data.len()
            ))
            .into());
        }
        if data.len() > needed {
            return Err(CheckpointError::Manifest(format!(
                "{} trailing bytes after the last parameter",
                data.len() - needed
            ))
            .into());
        }
        let mut tensors = Vec::with_capacity(header.manifest.len());
        for entry in header.manifest {
            let n: usize = entry.shape.iter().product();
            let (chunk, rest) = data.split_at(4 * n);
            data = rest;
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((entry.name, entry.shape, values));
        }
        let params = Params::from_tensors(&header.model, tensors)?;
        Ok(Self {
            params,
            vocab: header.vocab,
        })
    }
}

/// Writes `checkpoint` to `path` and returns its content id.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<String> {
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, &bytes).map_err(|e| Error::file(path, e))?;
    Ok(checkpoint_id(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
