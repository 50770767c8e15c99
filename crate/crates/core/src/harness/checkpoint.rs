//! Checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MABSACK1"
//! u64            header length in bytes
//! header         UTF-8 JSON: stage, config_hash, config, epoch, step,
//!                best_metric, tensors: [{name, rows, cols}]
//! f64 × Σ rows·cols   tensor data, row-major, in header order
//! ```
//!
//! Parameters are stored under their own names and the optimizer moments
//! under `adam.m/<name>` and `adam.v/<name>`. Tensors are written in name
//! order, so saving a loaded checkpoint reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::Params;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::optim::AdamState;

const MAGIC: &[u8; 8] = b"MABSACK1";
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mate,
    Masc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config: RunConfig,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Dev metric of this checkpoint, if it was evaluated.
    pub best_metric: Option<f64>,
    pub params: Params,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: Stage,
    config_hash: String,
    config: RunConfig,
    epoch: usize,
    step: usize,
    best_metric: Option<f64>,
    optimizer_step: usize,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(stage: Stage, config: &RunConfig, params: Params) -> Self {
        Self {
            stage,
            config: config.clone(),
            config_hash: config.config_hash(),
            epoch: 0,
            step: 0,
            best_metric: None,
            params,
            optimizer: AdamState::default(),
        }
    }

    /// Fails unless the checkpoint is for `stage`.
    pub fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::Checkpoint(format!(
                "expected a {stage:?} checkpoint, found {:?}",
                self.stage
            )));
        }
        Ok(())
    }

    /// Fails unless the checkpoint was produced under the same configuration.
    pub fn expect_config(&self, cfg: &RunConfig) -> Result<()> {
        let run = cfg.config_hash();
        if run != self.config_hash {
            return Err(Error::ConfigHashMismatch {
                checkpoint: self.config_hash.clone(),
                run,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, &Array2<f64>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        tensors.extend(self.optimizer.m.iter().map(|(n, t)| (format!("{M_PREFIX}{n}"), t)));
        tensors.extend(self.optimizer.v.iter().map(|(n, t)| (format!("{V_PREFIX}{n}"), t)));
        let header = Header {
            stage: self.stage,
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            best_metric: self.best_metric,
            optimizer_step: self.optimizer.step,
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut offset = header_end;
        let mut params = Params::new();
        let mut optimizer = AdamState {
            step: header.optimizer_step,
            ..AdamState::default()
        };
        for entry in &header.tensors {
            let n = entry.rows * entry.cols;
            let end = offset + n * 8;
            if end > bytes.len() {
                return Err(bad("truncated tensor data"));
            }
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset = end;
            let t = Array2::from_shape_vec((entry.rows, entry.cols), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            if let Some(name) = entry.name.strip_prefix(M_PREFIX) {
                optimizer.m.insert(name, t);
            } else if let Some(name) = entry.name.strip_prefix(V_PREFIX) {
                optimizer.v.insert(name, t);
            } else {
                params.insert(entry.name.clone(), t);
            }
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            stage: header.stage,
            config: header.config,
            config_hash: header.config_hash,
            epoch: header.epoch,
            step: header.step,
            best_metric: header.best_metric,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
