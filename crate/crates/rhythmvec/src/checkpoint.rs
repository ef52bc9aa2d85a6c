//! Self-describing model checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! bytes 0..5   magic "RVEC1"
//! byte  5      model kind (1 = speaker, 2 = duration)
//! bytes 6..10  u32 header length
//! ...          header JSON: config, training_meta, parameter names/shapes
//! ...          raw f64 parameter data, in header order
//! ```
//!
//! Parameters are stored as raw IEEE-754 bits, so save -> load -> forward
//! reproduces the original forward pass exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mat, ParamSet};

pub const MAGIC: &[u8; 5] = b"RVEC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Speaker,
    Duration,
}

impl ModelKind {
    fn to_byte(self) -> u8 {
        match self {
            ModelKind::Speaker => 1,
            ModelKind::Duration => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(ModelKind::Speaker),
            2 => Ok(ModelKind::Duration),
            other => Err(Error::Checkpoint(format!("unknown model kind byte {other}"))),
        }
    }
}

/// Provenance recorded alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    /// Best validation metric: EER for the speaker model, MSE (s^2) for the
    /// duration model. `None` when the model was never evaluated.
    pub best_metric: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamDesc {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    training_meta: TrainingMeta,
    params: Vec<ParamDesc>,
}

/// Serialized model: config, named parameter tensors, training provenance.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub config_json: serde_json::Value,
    pub training_meta: TrainingMeta,
    pub params: ParamSet,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config_json.clone(),
            training_meta: self.training_meta.clone(),
            params: self
                .params
                .iter()
                .map(|(name, m)| ParamDesc {
                    name: name.to_owned(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let data_len: usize = self.params.iter().map(|(_, m)| m.len() * 8).sum();
        let mut out = Vec::with_capacity(10 + header_bytes.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.push(self.kind.to_byte());
        out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, m) in self.params.iter() {
            for &v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..5] != MAGIC {
            return Err(Error::Checkpoint("missing RVEC1 magic".into()));
        }
        let kind = ModelKind::from_byte(bytes[5])?;
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let header_end = 10 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[10..header_end])?;

        let mut params = ParamSet::new();
        let mut off = header_end;
        for desc in &header.params {
            let count = desc.rows * desc.cols;
            let end = off + count * 8;
            if bytes.len() < end {
                return Err(Error::Checkpoint(format!(
                    "truncated data for parameter {}",
                    desc.name
                )));
            }
            let mut data = Vec::with_capacity(count);
            for i in 0..count {
                let chunk: [u8; 8] = bytes[off + i * 8..off + i * 8 + 8]
                    .try_into()
                    .expect("8-byte chunk");
                data.push(f64::from_le_bytes(chunk));
            }
            params.push(desc.name.clone(), Mat::from_vec(desc.rows, desc.cols, data));
            off = end;
        }
        if off != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
        }
        Ok(ModelCheckpoint {
            kind,
            config_json: header.config,
            training_meta: header.training_meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        let mut params = ParamSet::new();
        params.push("a.w", Mat::from_vec(2, 3, vec![1.5, -2.25, 0.0, 1e-300, f64::MAX, -0.5]));
        params.push("a.b", Mat::from_vec(1, 3, vec![0.1, 0.2, 0.3]));
        ModelCheckpoint {
            kind: ModelKind::Speaker,
            config_json: serde_json::json!({"embed_dim": 32}),
            training_meta: TrainingMeta {
                seed: 7,
                epochs_run: 120,
                best_metric: Some(0.1875),
            },
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, ck.kind);
        assert_eq!(back.config_json, ck.config_json);
        assert_eq!(back.training_meta, ck.training_meta);
        assert_eq!(back.params, ck.params);
        // Serialization itself is deterministic.
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn magic_and_kind_are_validated() {
        let ck = sample();
        let mut bytes = ck.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bytes).is_err());

        let bytes = ck.to_bytes().unwrap();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert!(back.expect_kind(ModelKind::Duration).is_err());
        assert!(back.expect_kind(ModelKind::Speaker).is_ok());
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    }
}
