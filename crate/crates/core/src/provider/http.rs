//! Client for the common `/embeddings` wire shape:
//! request `{"model", "input": [..]}`, response `{"data": [{"index", "embedding"}]}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Embedder, ProviderError};

pub const DEFAULT_KEY_ENV: &str = "RFLOW_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_batch: usize,
    pub max_parallel: usize,
    pub retries: u32,
    /// First backoff delay; doubles per attempt with ±20% jitter.
    pub backoff_base_ms: u64,
    pub timeout_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: DEFAULT_KEY_ENV.into(),
            max_batch: 64,
            max_parallel: 4,
            retries: 5,
            backoff_base_ms: 500,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpEmbedder")
            .field("endpoint", &self.cfg.endpoint)
            .field("model", &self.cfg.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpEmbedder {
    pub fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        if cfg.max_batch == 0 || cfg.max_parallel == 0 {
            return Err(ProviderError::Config(
                "max batch and max parallel must be at least 1".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(HttpEmbedder { cfg, client, api_key })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let jitter = rand::rng().random_range(0.8..=1.2);
        Duration::from_secs_f64(base * jitter / 1000.0)
    }

    fn request_chunk(&self, chunk: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = EmbeddingRequest {
            model: &self.cfg.model,
            input: chunk,
        };
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(&self.cfg.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let (retryable, err) = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
                        return parse_response(&text, chunk.len());
                    }
                    let body = resp.text().unwrap_or_default();
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    (
                        retryable,
                        ProviderError::Endpoint {
                            status: status.as_u16(),
                            body: excerpt(&body),
                        },
                    )
                }
                Err(e) => (
                    e.is_timeout() || e.is_connect(),
                    ProviderError::Transport(e.to_string()),
                ),
            };
            if !retryable || attempt >= self.cfg.retries {
                return Err(err);
            }
            tracing::warn!(attempt, error = %err, "embedding request failed, retrying");
            std::thread::sleep(self.backoff(attempt));
            attempt += 1;
        }
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

fn parse_response(text: &str, expected: usize) -> Result<Vec<Vec<f64>>, ProviderError> {
    let parsed: EmbeddingResponse = serde_json::from_str(text)
        .map_err(|e| ProviderError::Malformed(format!("{e}: {}", excerpt(text))))?;
    if parsed.data.len() != expected {
        return Err(ProviderError::Malformed(format!(
            "expected {expected} embeddings, got {}",
            parsed.data.len()
        )));
    }
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for d in parsed.data {
        match slots.get_mut(d.index) {
            Some(slot @ None) => *slot = Some(d.embedding),
            _ => {
                return Err(ProviderError::Malformed(format!(
                    "bad or repeated index {}",
                    d.index
                )))
            }
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.cfg.model)
    }

    fn dimension(&self) -> Option<usize> {
        None
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        super::check_texts(texts)?;
        let chunks: Vec<&[String]> = texts.chunks(self.cfg.max_batch).collect();
        let results: Mutex<Vec<Option<Result<Vec<Vec<f64>>, ProviderError>>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.cfg.max_parallel.min(chunks.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chunk) = chunks.get(i) else { break };
                    let r = self.request_chunk(chunk);
                    let failed = r.is_err();
                    results.lock().expect("result lock")[i] = Some(r);
                    if failed {
                        // stop handing out new chunks; in-flight ones finish
                        next.store(chunks.len(), Ordering::SeqCst);
                    }
                });
            }
        });

        let mut out = Vec::with_capacity(texts.len());
        for r in results.into_inner().expect("result lock") {
            match r {
                Some(Ok(vectors)) => out.extend(vectors),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(ProviderError::Transport(
                        "request abandoned after an earlier failure".into(),
                    ))
                }
            }
        }
        let dim = out[0].len();
        if let Some(bad) = out.iter().find(|v| v.len() != dim) {
            return Err(ProviderError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(out)
    }
}
