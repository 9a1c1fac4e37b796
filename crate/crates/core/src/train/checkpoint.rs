//! Self-describing weight container.
//!
//! Layout: the 8-byte magic `BLNKCKPT`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every weight array as little-endian `f64` in
//! header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::{ChannelConfig, ChannelStats, Recording};
use crate::error::{Error, Result};
use crate::nn::{HyperParams, Model, Param};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BLNKCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// How inputs were scaled during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationInfo {
    pub scheme: String,
    pub channels: Vec<String>,
    /// Mean over the training recordings of each channel's removed statistics.
    pub stats: Vec<ChannelStats>,
}

impl NormalizationInfo {
    /// Records the montage and the average removed statistics of `recordings`.
    pub fn from_recordings(recordings: &[&Recording], channels: &ChannelConfig) -> Self {
        let stats = channels
            .names
            .iter()
            .map(|name| {
                let found: Vec<ChannelStats> = recordings
                    .iter()
                    .filter_map(|r| {
                        r.channel_names
                            .iter()
                            .position(|n| n == name)
                            .map(|i| r.stats[i])
                    })
                    .collect();
                if found.is_empty() {
                    return ChannelStats::IDENTITY;
                }
                let n = found.len() as f64;
                ChannelStats {
                    mean: found.iter().map(|s| s.mean).sum::<f64>() / n,
                    sd: found.iter().map(|s| s.sd).sum::<f64>() / n,
                }
            })
            .collect();
        NormalizationInfo {
            channels: channels.names.clone(),
            stats,
            ..Self::default()
        }
    }
}

impl Default for NormalizationInfo {
    fn default() -> Self {
        NormalizationInfo {
            scheme: "per-recording-zscore".into(),
            channels: Vec::new(),
            stats: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    hyperparams: HyperParams,
    weights: Vec<WeightEntry>,
    normalization: NormalizationInfo,
    train_config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyperparams: HyperParams,
    pub params: Vec<Param>,
    pub normalization: NormalizationInfo,
    pub train_config_digest: String,
}

impl Checkpoint {
    pub fn new(model: Model, normalization: NormalizationInfo, cfg: &TrainConfig) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            hyperparams: model.hyperparams().clone(),
            params: model.params().to_vec(),
            normalization,
            train_config_digest: cfg.digest(),
        }
    }

    /// Rebuilds the model, validating every weight against the architecture.
    pub fn model(&self) -> Result<Model> {
        Model::from_params(&self.hyperparams, self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: self.format_version,
            hyperparams: self.hyperparams.clone(),
            weights: self
                .params
                .iter()
                .map(|p| WeightEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
            normalization: self.normalization.clone(),
            train_config_digest: self.train_config_digest.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let n: usize = self.params.iter().map(|p| p.value.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 {
            return Err(err(format!(
                "file is truncated: {} bytes, no header",
                bytes.len()
            )));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(err("not a checkpoint: bad magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                err(format!(
                    "file is truncated inside the {header_len}-byte header"
                ))
            })?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| err(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(err(format!(
                "format_version: expected {FORMAT_VERSION}, found {}",
                header.format_version
            )));
        }
        let mut body = &bytes[header_end..];
        let mut params = Vec::with_capacity(header.weights.len());
        for w in &header.weights {
            let n: usize = w.shape.iter().product();
            let need = n * 8;
            if body.len() < need {
                return Err(err(format!("file is truncated inside weight {}", w.name)));
            }
            let data = body[..need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            body = &body[need..];
            let value = Tensor::new(w.shape.clone(), data)
                .map_err(|e| err(format!("weight {}: {e}", w.name)))?;
            params.push(Param {
                name: w.name.clone(),
                value,
            });
        }
        if !body.is_empty() {
            return Err(err(format!(
                "{} trailing bytes after the last weight",
                body.len()
            )));
        }
        let ckpt = Checkpoint {
            format_version: header.format_version,
            hyperparams: header.hyperparams,
            params,
            normalization: header.normalization,
            train_config_digest: header.train_config_digest,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
