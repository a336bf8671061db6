//! Checkpoint file: `OCTVFCK1`, u32 header length, JSON header, u64 weight
//! count, then the f32 weight blob (little-endian) in declaration order.

use serde::{Deserialize, Serialize};

use super::model::{ModelSpec, Network};
use crate::error::CheckpointError;
use crate::task::{Modality, Target};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OCTVFCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub kind: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

/// Targets are standardized for training; predictions are mapped back
/// with `y = mean[k] + scale * z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl OutputScaling {
    pub fn identity(n: usize) -> OutputScaling {
        OutputScaling { mean: vec![0.0; n], scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelSpec,
    pub modality: Modality,
    pub target: Target,
    pub epoch: usize,
    pub seed: u64,
    pub optimizer: OptimizerMeta,
    pub output_scaling: OutputScaling,
    pub val_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: Vec<f32>,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network<f32>, CheckpointError> {
        Ok(Network::from_blob(&self.header.model, &self.weights)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + 4 + header.len() + 8 + 4 * self.weights.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let take = |pos: usize, n: usize| bytes.get(pos..pos + n).ok_or(CheckpointError::Truncated(pos));
        let hlen = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes")) as usize;
        let header: CheckpointHeader = serde_json::from_slice(take(12, hlen)?)?;
        let mut pos = 12 + hlen;
        let count = u64::from_le_bytes(take(pos, 8)?.try_into().expect("8 bytes")) as usize;
        pos += 8;
        let expected = header.model.blob_len();
        if count != expected {
            return Err(CheckpointError::WeightCount { expected, got: count });
        }
        let raw = take(pos, 4 * count)?;
        if bytes.len() != pos + 4 * count {
            return Err(CheckpointError::Truncated(pos + 4 * count));
        }
        let weights = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Checkpoint { header, weights })
    }
}
