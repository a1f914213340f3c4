//! Checkpoint archive: magic `RGCK`, version, a JSON metadata header (config
//! snapshot, epoch/step, RNG capture, tensor manifest), then the named
//! parameter blobs as little-endian `f32`.
//!
//! Parameters are rounded through `f32` when the checkpoint is constructed,
//! so saving and loading is bit-lossless and an evaluation from a loaded
//! checkpoint matches one from the in-memory checkpoint exactly.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::RgError;
use crate::model::{Model, ModelConfig};
use crate::nn::ParamStore;

use super::TrainConfig;

const MAGIC: &[u8; 4] = b"RGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    model_cfg: ModelConfig,
    epoch: usize,
    step: u64,
    rng_seed: u64,
    tensors: Vec<TensorEntry>,
}

/// Trained parameters plus everything needed to reproduce evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model_cfg: ModelConfig,
    pub epoch: usize,
    pub step: u64,
    /// Base seed; all stochastic streams derive from `(seed, step, ...)`.
    pub rng_seed: u64,
    /// `f32`-rounded parameters (storage precision).
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(
        config: TrainConfig,
        model: &Model,
        epoch: usize,
        step: u64,
        rng_seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            config,
            model_cfg: model.cfg.clone(),
            epoch,
            step,
            rng_seed,
            params: model.params.rounded_to_f32(),
        }
    }

    pub fn model(&self) -> Model {
        Model {
            cfg: self.model_cfg.clone(),
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RgError> {
        let tensors: Vec<TensorEntry> = self
            .params
            .iter()
            .map(|(name, a)| TensorEntry {
                name: name.clone(),
                rows: a.nrows(),
                cols: a.ncols(),
            })
            .collect();
        let meta = Meta {
            config: self.config.clone(),
            model_cfg: self.model_cfg.clone(),
            epoch: self.epoch,
            step: self.step,
            rng_seed: self.rng_seed,
            tensors,
        };
        let meta_json = serde_json::to_vec(&meta)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta_json);
        for (_, a) in self.params.iter() {
            for x in a.iter() {
                buf.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| RgError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, RgError> {
        let bytes = fs::read(path).map_err(|e| RgError::io(path.display().to_string(), e))?;
        let loc = path.display().to_string();
        if bytes.len() < 16 {
            return Err(RgError::CheckpointLoad(format!("{loc}: file too short")));
        }
        if &bytes[0..4] != MAGIC {
            return Err(RgError::CheckpointLoad(format!("{loc}: bad magic")));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(RgError::CheckpointLoad(format!(
                "{loc}: unsupported version {version}"
            )));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + meta_len {
            return Err(RgError::CheckpointLoad(format!(
                "{loc}: truncated metadata"
            )));
        }
        let meta: Meta = serde_json::from_slice(&bytes[16..16 + meta_len])
            .map_err(|e| RgError::CheckpointLoad(format!("{loc}: bad metadata: {e}")))?;

        let expected: usize = meta.tensors.iter().map(|t| t.rows * t.cols * 4).sum();
        let blob = &bytes[16 + meta_len..];
        if blob.len() != expected {
            return Err(RgError::CheckpointLoad(format!(
                "{loc}: parameter blob is {} bytes, manifest expects {expected}",
                blob.len()
            )));
        }
        let mut params = ParamStore::new();
        let mut offset = 0usize;
        for entry in &meta.tensors {
            let n = entry.rows * entry.cols;
            let mut values = Vec::with_capacity(n);
            for chunk in blob[offset..offset + n * 4].chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
            offset += n * 4;
            let arr = Array2::from_shape_vec((entry.rows, entry.cols), values)
                .map_err(|e| RgError::CheckpointLoad(format!("{loc}: {e}")))?;
            params.insert(entry.name.clone(), arr);
        }
        Ok(Checkpoint {
            config: meta.config,
            model_cfg: meta.model_cfg,
            epoch: meta.epoch,
            step: meta.step,
            rng_seed: meta.rng_seed,
            params,
        })
    }
}
