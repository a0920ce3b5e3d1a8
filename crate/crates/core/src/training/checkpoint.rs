//! Binary checkpoint container: the magic `CLIPSBR1`, a little-endian u64
//! header length, a JSON header, then little-endian f32 tensors in header
//! order (parameters, then Adam first and second moments).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::config::TrainConfig;
use crate::model::{ModelParams, ModelShape, TensorSpec};

pub const MAGIC: &[u8; 8] = b"CLIPSBR1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint layout mismatch: {0}")]
    Layout(String),
    #[error("checkpoint {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_mrr5: f64,
    pub config: TrainConfig,
    pub config_hash: String,
    /// Content hash of the split files the model was trained on.
    pub data_hash: Option<String>,
    /// Content hash of the partition artifact.
    pub partition_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    shape: ModelShape,
    tensors: Vec<TensorSpec>,
    adam_step: u64,
    epoch: usize,
    best_mrr5: f64,
    config: TrainConfig,
    config_hash: String,
    data_hash: Option<String>,
    partition_hash: Option<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            shape: self.params.shape,
            tensors: self.params.tensor_specs(),
            adam_step: self.adam.step,
            epoch: self.epoch,
            best_mrr5: self.best_mrr5,
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            data_hash: self.data_hash.clone(),
            partition_hash: self.partition_hash.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 12 * self.params.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in [&self.params, &self.adam.m, &self.adam.v] {
            for (_, _, t) in p.tensors() {
                for &x in t {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(8)]) {
                CheckpointError::Truncated
            } else {
                CheckpointError::BadMagic
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..).ok_or(CheckpointError::Truncated)?;
        let json = body.get(..len).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut params = ModelParams::zeros(header.shape).map_err(|e| CheckpointError::Layout(e.to_string()))?;
        if params.tensor_specs() != header.tensors {
            return Err(CheckpointError::Layout("tensor list does not match the declared shape".into()));
        }
        let mut adam = AdamState::new(&params);
        adam.step = header.adam_step;
        let mut payload = &body[len..];
        for p in [&mut params, &mut adam.m, &mut adam.v] {
            for t in p.tensors_mut() {
                let need = 4 * t.len();
                if payload.len() < need {
                    return Err(CheckpointError::Truncated);
                }
                for (x, chunk) in t.iter_mut().zip(payload[..need].chunks_exact(4)) {
                    *x = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                }
                payload = &payload[need..];
            }
        }
        if !payload.is_empty() {
            return Err(CheckpointError::Layout(format!("{} trailing bytes", payload.len())));
        }
        Ok(Self {
            params,
            adam,
            epoch: header.epoch,
            best_mrr5: header.best_mrr5,
            config: header.config,
            config_hash: header.config_hash,
            data_hash: header.data_hash,
            partition_hash: header.partition_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes =
            std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
