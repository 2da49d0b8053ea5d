//! Text → vector backends and the on-disk flow format.

mod flowfile;
mod http;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flowfile::{read_flow, write_flow, FlowFile, FlowFileError, FlowMeta, HEADER_LEN, MAGIC, VERSION};
pub use http::{HttpConfig, HttpEmbedder, DEFAULT_KEY_ENV};
pub use synth::{raw_embedding, synth_embedding, token_coordinate, SynthEmbedder};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("endpoint returned {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("{0} provider cannot embed raw text")]
    Unsupported(&'static str),
}

/// A representation operator: maps texts to vectors, one per input, in order.
pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in flow metadata.
    fn id(&self) -> String;
    fn dimension(&self) -> Option<usize>;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

fn check_texts(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::EmptyInput("no texts".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(ProviderError::EmptyInput(format!("text {i} is empty")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Synth { dim: usize, seed: u64 },
    Http(HttpConfig),
    /// Directory of pre-built flow files named `<logic>/<topic>/<language>.rflw`.
    File { dir: PathBuf },
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        match self {
            ProviderConfig::Synth { dim, .. } if *dim < 2 => {
                Err(ProviderError::Config(format!("dimension must be ≥ 2, got {dim}")))
            }
            ProviderConfig::Http(h) if h.max_batch == 0 || h.max_parallel == 0 => Err(
                ProviderError::Config("max batch and max parallel must be ≥ 1".into()),
            ),
            ProviderConfig::Http(h) if h.endpoint.is_empty() => {
                Err(ProviderError::Config("http provider needs an endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    /// Builds a text embedder. The `file` kind has none.
    pub fn embedder(&self) -> Result<Box<dyn Embedder>, ProviderError> {
        self.validate()?;
        match self {
            ProviderConfig::Synth { dim, seed } => Ok(Box::new(SynthEmbedder {
                dim: *dim,
                seed: *seed,
            })),
            ProviderConfig::Http(h) => Ok(Box::new(HttpEmbedder::new(h.clone())?)),
            ProviderConfig::File { .. } => Err(ProviderError::Unsupported("file")),
        }
    }
}

pub fn embed_batch(texts: &[String], cfg: &ProviderConfig) -> Result<Vec<Vec<f64>>, ProviderError> {
    cfg.embedder()?.embed_batch(texts)
}
