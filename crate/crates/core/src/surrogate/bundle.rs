//! Trained-model files: `UFNM`, u32 version, u32 metadata length, JSON
//! metadata, then little-endian f32 weights in build order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::unet::{UNet, UNetSpec};
use crate::error::{Error, Result};
use crate::interface::field::{read_f32s, read_u32};
use crate::interface::{read_bytes, write_bytes};
use crate::raster::{Component, NormStats};

pub const MODEL_MAGIC: &[u8; 4] = b"UFNM";
pub const MODEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Validation MAE (m/s) of the returned weights.
    pub validation_mae: f64,
    pub train_layouts: usize,
    /// Grid the model was trained on; inputs must match it.
    pub resolution: usize,
    pub cell_size: f64,
    pub dataset_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    spec: UNetSpec,
    norm: NormStats,
    component: Component,
    training: TrainingMeta,
}

/// A trained single-component model together with the scaling it was trained with.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub component: Component,
    pub norm: NormStats,
    pub training: TrainingMeta,
    net: UNet<f32>,
}

impl ModelBundle {
    pub fn new(net: UNet<f32>, component: Component, norm: NormStats, training: TrainingMeta) -> Result<Self> {
        norm.validate()?;
        Ok(ModelBundle {
            component,
            norm,
            training,
            net,
        })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.net.spec
    }

    pub fn network(&self) -> &UNet<f32> {
        &self.net
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&Metadata {
            spec: self.net.spec,
            norm: self.norm,
            component: self.component,
            training: self.training.clone(),
        })
        .expect("in-memory serialization cannot fail");
        let weights = self.net.flat_weights();
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 4 * weights.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for w in weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Integrity(format!(
                "model file truncated: header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MODEL_MAGIC {
            return Err(Error::Format(format!("bad model magic {:?}", &bytes[..4])));
        }
        let version = read_u32(bytes, 4);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let meta_len = read_u32(bytes, 8) as usize;
        let meta_end = HEADER_LEN + meta_len;
        if bytes.len() < meta_end {
            return Err(Error::Integrity(format!(
                "model file truncated: metadata needs {meta_end} bytes, got {}",
                bytes.len()
            )));
        }
        let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| Error::Format(format!("model metadata: {e}")))?;
        meta.spec.validate()?;
        let expected = meta_end + 4 * meta.spec.parameter_count();
        if bytes.len() != expected {
            return Err(Error::Integrity(format!(
                "model file length mismatch: expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let net = UNet::from_flat(meta.spec, &read_f32s(&bytes[meta_end..]))?;
        ModelBundle::new(net, meta.component, meta.norm, meta.training)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }
}
