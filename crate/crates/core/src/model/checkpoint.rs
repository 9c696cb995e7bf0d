//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   b"WATTCKPT"
//! version      u32 LE    FORMAT_VERSION
//! header_len   u64 LE
//! header       JSON      {"model_config", "provenance", "parameters": [{"name", "shape"}]}
//! payload      f64 LE    every parameter buffer, in header order
//! digest       32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClipModel, ModelConfig, ParameterSet};
use crate::autodiff::Tensor;
use crate::error::{Result, WattError};
use crate::io::atomic_write;

pub const MAGIC: &[u8; 8] = b"WATTCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub loss_at_save: Option<f64>,
    pub library_version: String,
    #[serde(default)]
    pub note: Option<String>,
}

impl Provenance {
    pub fn new(seed: u64, pretrain_epochs: usize, loss_at_save: Option<f64>) -> Self {
        Provenance {
            seed,
            pretrain_epochs,
            loss_at_save,
            library_version: crate::VERSION.to_string(),
            note: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub parameters: ParameterSet,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    provenance: Provenance,
    parameters: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn from_model(model: &ClipModel, provenance: Provenance) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model_config: model.config().clone(),
            parameters: model.params().clone(),
            provenance,
        }
    }

    pub fn to_model(&self) -> Result<ClipModel> {
        ClipModel::from_parameters(self.model_config.clone(), self.parameters.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model_config: self.model_config.clone(),
            provenance: self.provenance.clone(),
            parameters: self
                .parameters
                .iter()
                .map(|(name, t)| Entry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + self.parameters.numel() * 8 + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.parameters.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: String| WattError::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
            return Err(fail(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("bad magic bytes; not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(WattError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("checksum mismatch (truncated or corrupted file)".into()));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| fail("header length exceeds file size".into()))?;
        let header: Header =
            serde_json::from_slice(&body[20..header_end]).map_err(|e| fail(format!("unreadable header: {e}")))?;
        let mut payload = &body[header_end..];
        let mut parameters = ParameterSet::new();
        for entry in header.parameters {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(fail(format!("payload ends inside parameter `{}`", entry.name)));
            }
            let data = payload[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[n * 8..];
            parameters
                .insert(entry.name, Tensor::new(entry.shape, data)?)
                .map_err(|e| fail(e.to_string()))?;
        }
        if !payload.is_empty() {
            return Err(fail(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(Checkpoint {
            format_version: version,
            model_config: header.model_config,
            parameters,
            provenance: header.provenance,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| WattError::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Checkpoint::from_bytes(&bytes, path)
}

/// Loads a checkpoint and rejects it unless it was written for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.model_config != expected {
        return Err(WattError::ConfigMismatch(format!(
            "checkpoint {} was saved with {:?}, expected {:?}",
            path.display(),
            ckpt.model_config,
            expected
        )));
    }
    ckpt.to_model()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let m = ClipModel::init(ModelConfig::default(), 9).unwrap();
        Checkpoint::from_model(&m, Provenance::new(9, 0, Some(1.5)))
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = ckpt();
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.parameters.bit_eq(&c.parameters));
        assert_eq!(back.model_config, c.model_config);
        assert_eq!(back.provenance, c.provenance);
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn truncated_and_corrupted_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let bytes = ckpt().to_bytes().unwrap();
        for cut in [0, 7, 30, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(load_checkpoint(&path).is_err(), "cut at {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 0x40;
        fs::write(&path, &flipped).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut bytes = ckpt().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(WattError::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn different_model_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &ckpt()).unwrap();
        let other = ModelConfig {
            embed_dim: 8,
            ..ModelConfig::default()
        };
        assert!(matches!(
            load_checkpoint_for(&path, &other),
            Err(WattError::ConfigMismatch(_))
        ));
        assert!(load_checkpoint_for(&path, &ModelConfig::default()).is_ok());
    }
}
