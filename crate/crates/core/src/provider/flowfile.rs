//! RFLW flow files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RFLW" | u32 version = 1 | u32 d | u32 T | T·d × f32 (row t = point t+1)
//!        | u64 metadata length | metadata (UTF-8 JSON)
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"RFLW";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowMeta {
    pub logic_id: String,
    pub topic: String,
    pub language: String,
    /// Record mode (`carrier` / `abstract`).
    #[serde(default)]
    pub mode: String,
    #[serde(default)]
    pub provider: String,
    /// `prefix-embedding`, `step-span` or `synthetic`.
    #[serde(default)]
    pub pooling: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joiner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_prompt: Option<bool>,
    /// Fields written by other producers are carried through untouched.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl FlowMeta {
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.logic_id, self.topic, self.language)
    }

    /// Producers that only write `mode` put the pooling name there
    /// (e.g. `"mode": "step-span"`); move it to `pooling`.
    fn normalize(&mut self) {
        const POOLINGS: [&str; 4] = ["prefix-embedding", "step-span", "prefix-last", "synthetic"];
        if self.pooling.is_empty() && POOLINGS.contains(&self.mode.as_str()) {
            self.pooling = std::mem::replace(&mut self.mode, "carrier".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowFile {
    pub dim: usize,
    pub steps: usize,
    /// Row-major `steps × dim`.
    pub payload: Vec<f32>,
    pub meta: FlowMeta,
}

#[derive(Debug, Error)]
pub enum FlowFileError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: needed {needed} bytes, found {found}")]
    TruncatedPayload { needed: usize, found: usize },
    #[error("header inconsistent with payload: {0}")]
    Inconsistent(String),
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FlowFile {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.payload[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FlowFileError> {
        if self.dim == 0 || self.steps == 0 {
            return Err(FlowFileError::Inconsistent("d and T must be positive".into()));
        }
        if self.payload.len() != self.dim * self.steps {
            return Err(FlowFileError::Inconsistent(format!(
                "payload has {} values, header says {}×{}",
                self.payload.len(),
                self.steps,
                self.dim
            )));
        }
        let dim = u32::try_from(self.dim).map_err(|_| FlowFileError::Inconsistent("d too large".into()))?;
        let steps =
            u32::try_from(self.steps).map_err(|_| FlowFileError::Inconsistent("T too large".into()))?;
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.payload.len() + 8 + meta.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&steps.to_le_bytes());
        for x in &self.payload {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FlowFile, FlowFileError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(FlowFileError::TruncatedPayload {
                    needed,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(FlowFileError::BadMagic(magic));
        }
        need(HEADER_LEN)?;
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(FlowFileError::UnsupportedVersion(version));
        }
        let dim = word(8) as usize;
        let steps = word(12) as usize;
        if dim == 0 || steps == 0 {
            return Err(FlowFileError::Inconsistent("d and T must be positive".into()));
        }
        let payload_end = HEADER_LEN + 4 * dim * steps;
        need(payload_end + 8)?;
        let payload = bytes[HEADER_LEN..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let meta_len = u64::from_le_bytes(bytes[payload_end..payload_end + 8].try_into().expect("8 bytes"));
        let meta_start = payload_end + 8;
        let meta_end = meta_start.saturating_add(usize::try_from(meta_len).unwrap_or(usize::MAX));
        need(meta_end)?;
        if meta_end != bytes.len() {
            return Err(FlowFileError::Inconsistent(format!(
                "{} trailing bytes after metadata",
                bytes.len() - meta_end
            )));
        }
        let mut meta: FlowMeta = serde_json::from_slice(&bytes[meta_start..meta_end])?;
        meta.normalize();
        Ok(FlowFile {
            dim,
            steps,
            payload,
            meta,
        })
    }
}

pub fn write_flow(file: &FlowFile, path: &Path) -> Result<(), FlowFileError> {
    let bytes = file.to_bytes()?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowFile, FlowFileError> {
    FlowFile::from_bytes(&std::fs::read(path)?)
}
