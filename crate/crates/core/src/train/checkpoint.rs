//! Binary checkpoint format.
//!
//! ```text
//! "AEDB" | u16 LE version | u32 LE metadata length | metadata JSON | f32 LE data
//! ```
//!
//! The metadata holds the training configuration, the vocabulary and a
//! tensor directory; each entry's `offset` counts f32 elements from the start
//! of the data block.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, ParameterSet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AEDB";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u16,
    /// Representation width, echoed from the config for quick inspection.
    pub dim: usize,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub tensors: Vec<TensorEntry>,
}

/// A trained model frozen at checkpoint precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    params: ParameterSet,
}

impl Checkpoint {
    /// Rounds `params` to f32 so the in-memory checkpoint equals what a
    /// save/load cycle would produce.
    pub fn new(config: TrainConfig, vocab: Vocabulary, mut params: ParameterSet) -> Self {
        params.round_to_f32();
        Self {
            config,
            vocab,
            params,
        }
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.config.model_spec(self.vocab.len())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            dim: self.config.dim,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&meta)?;
        let json_len = u32::try_from(json.len())
            .map_err(|_| Error::Checkpoint("metadata exceeds 4 GiB".into()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&json_len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn read_meta(bytes: &[u8]) -> Result<(CheckpointMeta, &[u8])> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let json_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let data_start = HEADER_LEN
            .checked_add(json_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated metadata".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[HEADER_LEN..data_start])
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        Ok((meta, &bytes[data_start..]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, data) = Self::read_meta(bytes)?;
        if data.len() % 4 != 0 {
            return Err(Error::Checkpoint("data block is not a whole number of f32".into()));
        }
        let floats: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let mut params = ParameterSet::new();
        let mut expected = 0;
        for entry in &meta.tensors {
            let len: usize = entry.shape.iter().product();
            let end = entry.offset + len;
            if entry.offset != expected || end > floats.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` out of bounds (truncated file?)",
                    entry.name
                )));
            }
            let t = Tensor::new(entry.shape.clone(), floats[entry.offset..end].to_vec())
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", entry.name)))?;
            params.insert(entry.name.clone(), t);
            expected = end;
        }
        if expected != floats.len() {
            return Err(Error::Checkpoint("trailing data after last tensor".into()));
        }
        Ok(Self {
            config: meta.config,
            vocab: meta.vocab,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Content hash of the serialized checkpoint (first 16 hex digits of SHA-256).
    pub fn id(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_bytes()?);
        Ok(hex::encode(&digest[..8]))
    }
}
