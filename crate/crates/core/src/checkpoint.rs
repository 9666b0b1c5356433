//! Versioned model checkpoints.
//!
//! Layout: the magic line, one line of JSON header, then every tensor's
//! values as little-endian `f64` in header order (model tensors first,
//! centroids last when present).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cah::InitMethod;
use crate::datasets::NormStats;
use crate::model::{ModelConfig, ModelParams, DECODER_SCHEME};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &str = "SEQCLUSTER-CKPT-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a {CHECKPOINT_MAGIC} checkpoint (found {found:?})")]
    Magic { path: PathBuf, found: String },
    #[error("{path}: malformed checkpoint: {detail}")]
    Malformed { path: PathBuf, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub decoder_scheme: String,
    /// `pretrain` or `refine`.
    pub stage: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub normalization: Option<NormStats>,
    pub init_method: Option<InitMethod>,
    pub tensors: Vec<TensorEntry>,
    pub centroids: Option<Vec<usize>>,
    /// Verbatim run configuration that produced the checkpoint.
    pub config_echo: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: String,
    pub seed: u64,
    pub model: ModelParams,
    pub normalization: Option<NormStats>,
    pub init_method: Option<InitMethod>,
    pub centroids: Option<Tensor>,
    pub config_echo: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            decoder_scheme: DECODER_SCHEME.into(),
            stage: self.stage.clone(),
            seed: self.seed,
            model: *self.model.config(),
            normalization: self.normalization.clone(),
            init_method: self.init_method,
            tensors: self.model.named().map(|(n, t)| TensorEntry { name: n.into(), shape: t.shape().to_vec() }).collect(),
            centroids: self.centroids.as_ref().map(|c| c.shape().to_vec()),
            config_echo: self.config_echo.clone(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
        out.push(b'\n');
        for t in self.model.tensors().iter().chain(self.centroids.as_ref()) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let malformed = |detail: String| CheckpointError::Malformed { path: path.to_path_buf(), detail };
        let line_end = |from: usize| bytes[from..].iter().position(|&b| b == b'\n').map(|p| from + p);
        let magic_end = line_end(0).unwrap_or(bytes.len().min(64));
        let magic = String::from_utf8_lossy(&bytes[..magic_end]).into_owned();
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic { path: path.to_path_buf(), found: magic });
        }
        let header_end = line_end(magic_end + 1).ok_or_else(|| malformed("missing header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[magic_end + 1..header_end]).map_err(|e| malformed(format!("header: {e}")))?;
        if header.decoder_scheme != DECODER_SCHEME {
            return Err(malformed(format!("unsupported decoder scheme {:?}", header.decoder_scheme)));
        }
        let mut payload = bytes[header_end + 1..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum::<usize>()
            + header.centroids.as_ref().map_or(0, |s| s.iter().product());
        if (bytes.len() - header_end - 1) != expected * 8 {
            return Err(malformed(format!("payload holds {} bytes, header describes {}", bytes.len() - header_end - 1, expected * 8)));
        }
        let mut take = |shape: &[usize]| -> Result<Tensor, CheckpointError> {
            let data: Vec<f64> = payload.by_ref().take(shape.iter().product()).collect();
            Tensor::new(shape.to_vec(), data).map_err(|e| malformed(e.to_string()))
        };
        let mut named = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            named.push((entry.name.clone(), take(&entry.shape)?));
        }
        let centroids = header.centroids.as_deref().map(&mut take).transpose()?;
        let model = ModelParams::from_named(header.model, named).map_err(|e| malformed(e.to_string()))?;
        Ok(Self {
            stage: header.stage,
            seed: header.seed,
            model,
            normalization: header.normalization,
            init_method: header.init_method,
            centroids,
            config_echo: header.config_echo,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes, path)
    }
}
