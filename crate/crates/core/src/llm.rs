//! Chat-completion and embedding backends.
//!
//! Remote backends speak the OpenAI-compatible HTTP protocol. Mock backends
//! answer from a directory of canned responses named `<hex-digest>.txt`,
//! where the digest is SHA-256 over `model NUL system NUL user`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vector::{tokenize, SparseVector};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("[{backend}] no canned response (expected file {digest}.txt)")]
    NoCannedResponse { backend: String, digest: String },
    #[error("[{backend}] authentication failed (HTTP {status})")]
    Auth { backend: String, status: u16 },
    #[error("[{backend}] HTTP {status}: {body}")]
    Http {
        backend: String,
        status: u16,
        body: String,
    },
    #[error("[{backend}] transport error: {message}")]
    Transport { backend: String, message: String },
    #[error("[{backend}] malformed response: {message}")]
    Malformed { backend: String, message: String },
    #[error("[{backend}] no endpoint configured (set base_url or {var})")]
    MissingEndpoint { backend: String, var: String },
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding dimension must be a positive power of two, got {0}")]
    InvalidDimension(usize),
    #[error("temperature {0} outside [0, 2]")]
    InvalidTemperature(f64),
    #[error("mock directory {path}: {source}")]
    MockDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            LlmError::Transport { .. } => true,
            LlmError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.1,
            max_output_tokens: None,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidTemperature(self.temperature));
        }
        Ok(())
    }
}

/// Anything that can answer a system + user prompt pair.
pub trait ChatModel: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, system: &str, user: &str, params: &CompletionParams) -> Result<String, LlmError>;
}

/// Counting semaphore bounding in-flight remote requests.
#[derive(Debug)]
pub struct AdmissionGate {
    capacity: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl AdmissionGate {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(AdmissionGate {
            capacity: capacity.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut n = self.in_use.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.capacity {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GatePermit { gate: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_use.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct GatePermit<'a> {
    gate: &'a AdmissionGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.in_use.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.gate.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    fn run<T>(&self, mut f: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let mut backoff = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match f() {
                Err(e) if e.retryable() && attempt < self.attempts.max(1) => {
                    log::warn!("attempt {attempt} failed: {e}; retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Environment-variable suffix for a backend name: uppercase, with every
/// non-alphanumeric character replaced by `_`.
pub fn env_suffix(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect()
}

pub fn api_key_var(name: &str) -> String {
    format!("FLAME_API_KEY_{}", env_suffix(name))
}

pub fn base_url_var(name: &str) -> String {
    format!("FLAME_BASE_URL_{}", env_suffix(name))
}

/// Shared HTTP plumbing for one remote model.
#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub name: String,
    pub base_url: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    pub gate: Arc<AdmissionGate>,
    client: reqwest::blocking::Client,
}

impl RemoteEndpoint {
    pub fn new(
        name: &str,
        base_url: &str,
        api_key: Option<String>,
        retry: RetryPolicy,
        gate: Arc<AdmissionGate>,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| LlmError::Transport {
                backend: name.to_string(),
                message: e.to_string(),
            })?;
        Ok(RemoteEndpoint {
            name: name.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            retry,
            gate,
            client,
        })
    }

    /// Resolves the base URL (explicit value, then `FLAME_BASE_URL_<NAME>`)
    /// and the key from `FLAME_API_KEY_<NAME>`.
    pub fn from_env(
        name: &str,
        base_url: Option<&str>,
        retry: RetryPolicy,
        gate: Arc<AdmissionGate>,
    ) -> Result<Self, LlmError> {
        let url = match base_url {
            Some(u) => u.to_string(),
            None => std::env::var(base_url_var(name)).map_err(|_| LlmError::MissingEndpoint {
                backend: name.to_string(),
                var: base_url_var(name),
            })?,
        };
        let key = std::env::var(api_key_var(name)).ok();
        Self::new(name, &url, key, retry, gate)
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, LlmError> {
        self.retry.run(|| {
            let _permit = self.gate.acquire();
            let mut req = self.client.post(format!("{}{}", self.base_url, path)).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| LlmError::Transport {
                backend: self.name.clone(),
                message: e.to_string(),
            })?;
            let status = resp.status().as_u16();
            if status == 401 || status == 403 {
                return Err(LlmError::Auth {
                    backend: self.name.clone(),
                    status,
                });
            }
            let text = resp.text().map_err(|e| LlmError::Transport {
                backend: self.name.clone(),
                message: e.to_string(),
            })?;
            if !(200..300).contains(&status) {
                return Err(LlmError::Http {
                    backend: self.name.clone(),
                    status,
                    body: text.chars().take(500).collect(),
                });
            }
            serde_json::from_str(&text).map_err(|e| self.malformed(e.to_string()))
        })
    }

    fn malformed(&self, message: String) -> LlmError {
        LlmError::Malformed {
            backend: self.name.clone(),
            message,
        }
    }
}

/// Directory of canned responses, loaded eagerly.
#[derive(Debug, Clone, Default)]
pub struct MockStore {
    responses: HashMap<String, String>,
}

impl MockStore {
    pub fn load(dir: &Path) -> Result<Self, LlmError> {
        let err = |source| LlmError::MockDir {
            path: dir.to_path_buf(),
            source,
        };
        let mut responses = HashMap::new();
        for entry in fs::read_dir(dir).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(err)?;
            responses.insert(stem.to_ascii_lowercase(), text);
        }
        Ok(MockStore { responses })
    }

    pub fn insert(&mut self, digest: String, response: String) {
        self.responses.insert(digest, response);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

pub fn mock_digest(model: &str, system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub enum BackendKind {
    Remote(RemoteEndpoint),
    Mock(Arc<MockStore>),
}

#[derive(Debug, Clone)]
pub struct ChatBackend {
    pub name: String,
    pub kind: BackendKind,
}

impl ChatBackend {
    pub fn mock(name: &str, store: Arc<MockStore>) -> Self {
        ChatBackend {
            name: name.to_string(),
            kind: BackendKind::Mock(store),
        }
    }

    pub fn remote(endpoint: RemoteEndpoint) -> Self {
        ChatBackend {
            name: endpoint.name.clone(),
            kind: BackendKind::Remote(endpoint),
        }
    }
}

impl ChatModel for ChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, system: &str, user: &str, params: &CompletionParams) -> Result<String, LlmError> {
        params.validate()?;
        match &self.kind {
            BackendKind::Mock(store) => {
                let digest = mock_digest(&self.name, system, user);
                store
                    .responses
                    .get(&digest)
                    .cloned()
                    .ok_or(LlmError::NoCannedResponse {
                        backend: self.name.clone(),
                        digest,
                    })
            }
            BackendKind::Remote(ep) => {
                let mut body = json!({
                    "model": self.name,
                    "messages": [
                        {"role": "system", "content": system},
                        {"role": "user", "content": user},
                    ],
                    "temperature": params.temperature,
                });
                if let Some(max) = params.max_output_tokens {
                    body["max_tokens"] = json!(max);
                }
                let resp = ep.post("/v1/chat/completions", &body)?;
                resp.pointer("/choices/0/message/content")
                    .and_then(|c| c.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| ep.malformed("missing choices[0].message.content".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit length; the zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, LlmError> {
    if a.dim() != b.dim() {
        return Err(LlmError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError>;
}

pub const DEFAULT_LOCAL_DIM: usize = 1 << 16;

/// Offline embedder: signed feature-hashed token counts, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct LocalEmbedder {
    dim: usize,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Result<Self, LlmError> {
        if dim == 0 || !dim.is_power_of_two() {
            return Err(LlmError::InvalidDimension(dim));
        }
        Ok(LocalEmbedder { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        LocalEmbedder {
            dim: DEFAULT_LOCAL_DIM,
        }
    }
}

impl Embedder for LocalEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        Ok(embed_local(text, self.dim))
    }
}

/// Panics if `dim` is not a power of two; use [`LocalEmbedder::new`] for a
/// checked constructor.
pub fn embed_local(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim.is_power_of_two(), "dim must be a power of two");
    let sparse = SparseVector::from_tokens(&tokenize(text), dim);
    let mut values = vec![0.0; dim];
    for (k, v) in sparse.entries {
        values[k] = v;
    }
    EmbeddingVector { values }.normalized()
}

/// Embeddings through `POST {base_url}/v1/embeddings`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: RemoteEndpoint,
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyInput);
        }
        let ep = &self.endpoint;
        let resp = ep.post(
            "/v1/embeddings",
            &json!({"model": ep.name, "input": text}),
        )?;
        let values: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| ep.malformed("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ep.malformed("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(ep.malformed("empty embedding".into()));
        }
        Ok(EmbeddingVector { values }.normalized())
    }
}
