//! Uniform client for the external model backends (captioner, OCR,
//! knowledge base, text generation): registration, retries with backoff,
//! per-backend rate limiting, deterministic mocks, and response caching.

mod clock;
mod http;
mod limiter;
mod mock;

pub use clock::{Clock, FakeClock, SystemClock};
pub use http::HttpBackend;
pub use limiter::RateLimiter;
pub use mock::{MockBackend, MockFixture};

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::sha256_hex;
use crate::store::{ArtifactStore, StoreError};

/// Where a request came from, so mocks can answer by lookup table and logs
/// stay attributable. Live backends ignore this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    /// "caption", "objects", "ocr", "brand", "story", or "task:<task_id>".
    pub purpose: String,
}

impl RequestContext {
    pub fn new(video_id: &str, frame_index: Option<usize>, purpose: &str) -> Self {
        Self {
            video_id: video_id.to_string(),
            frame_index,
            purpose: purpose.to_string(),
        }
    }

    /// Most-specific mock lookup key: `purpose:video_id[/frame]`.
    pub fn mock_key(&self) -> String {
        match self.frame_index {
            Some(frame) => format!("{}:{}/{}", self.purpose, self.video_id, frame),
            None => format!("{}:{}", self.purpose, self.video_id),
        }
    }
}

/// One backend call. Image payloads are raw PNG bytes; the HTTP layer
/// base64-encodes them on the wire.
#[derive(Debug, Clone)]
pub enum WireRequest {
    Caption {
        image_png: Vec<u8>,
        prompt: String,
        context: RequestContext,
    },
    Ocr {
        image_png: Vec<u8>,
        context: RequestContext,
    },
    Knowledge {
        channel: String,
        context: RequestContext,
    },
    Generate {
        prompt: String,
        temperature: f64,
        max_output_chars: usize,
        context: RequestContext,
    },
}

impl WireRequest {
    pub fn context(&self) -> &RequestContext {
        match self {
            WireRequest::Caption { context, .. }
            | WireRequest::Ocr { context, .. }
            | WireRequest::Knowledge { context, .. }
            | WireRequest::Generate { context, .. } => context,
        }
    }
}

/// Knowledge-base hit; all fields optional because backends resolve
/// whatever subset they can.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KnowledgeFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub company: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_line: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireResponse {
    Text(String),
    Knowledge(KnowledgeFields),
}

impl WireResponse {
    pub fn into_text(self) -> Result<String, GatewayError> {
        match self {
            WireResponse::Text(text) => Ok(text),
            WireResponse::Knowledge(_) => Err(GatewayError::UnexpectedResponseKind {
                expected: "text",
            }),
        }
    }

    pub fn into_knowledge(self) -> Result<KnowledgeFields, GatewayError> {
        match self {
            WireResponse::Knowledge(fields) => Ok(fields),
            WireResponse::Text(_) => Err(GatewayError::UnexpectedResponseKind {
                expected: "knowledge",
            }),
        }
    }
}

/// Error from a single backend attempt. `retryable` drives the retry loop:
/// transport-level failures are worth retrying, contract violations are
/// not.
#[derive(Debug, Clone, Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }
}

pub trait TextBackend: Send + Sync {
    fn id(&self) -> &str;
    fn call(&self, request: &WireRequest) -> Result<WireResponse, BackendError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),

    #[error("backend id {0:?} is already registered")]
    DuplicateBackend(String),

    #[error("generation prompt is empty")]
    EmptyPrompt,

    #[error("backend {backend_id} failed after {attempts} attempt(s): {last_error}")]
    ExhaustedRetries {
        backend_id: String,
        attempts: u32,
        last_error: BackendError,
    },

    #[error("backend {backend_id} returned the wrong response kind (expected {expected})")]
    WrongResponse {
        backend_id: String,
        expected: &'static str,
    },

    #[error("expected a {expected} response")]
    UnexpectedResponseKind { expected: &'static str },

    #[error("response cache: {0}")]
    Cache(#[from] StoreError),
}

/// Default output-length cap, comfortably above typical story lengths.
pub const DEFAULT_MAX_OUTPUT_CHARS: usize = 4_000;

/// Generation parameters for one text-generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_chars: usize,
    pub backend_id: String,
    pub context: RequestContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub cached: bool,
}

/// Per-backend operational limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendLimits {
    /// 0 disables pacing.
    pub rate_limit_per_minute: u32,
    /// Total attempts (the first call plus retries); minimum 1.
    pub max_attempts: u32,
}

impl Default for BackendLimits {
    fn default() -> Self {
        Self {
            rate_limit_per_minute: 0,
            max_attempts: 3,
        }
    }
}

const BACKOFF_BASE_MS: u64 = 500;

struct Registered {
    backend: Box<dyn TextBackend>,
    limiter: Mutex<RateLimiter>,
    max_attempts: u32,
}

#[derive(Serialize, Deserialize)]
struct CachedText {
    text: String,
}

/// Backend registry plus the shared retry/pacing/caching path. Register
/// every backend up front, then share `&Gateway` across workers.
pub struct Gateway {
    backends: BTreeMap<String, Registered>,
    clock: Arc<dyn Clock>,
    cache: Option<ArtifactStore>,
}

impl Gateway {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            backends: BTreeMap::new(),
            clock,
            cache: None,
        }
    }

    /// Enables disk caching of generation responses. Safe to delete the
    /// directory at any time; keys are content-addressed.
    pub fn with_response_cache(mut self, store: ArtifactStore) -> Self {
        self.cache = Some(store);
        self
    }

    pub fn register_backend(
        &mut self,
        backend: Box<dyn TextBackend>,
        limits: BackendLimits,
    ) -> Result<(), GatewayError> {
        let id = backend.id().to_string();
        if self.backends.contains_key(&id) {
            return Err(GatewayError::DuplicateBackend(id));
        }
        let limiter = RateLimiter::new(Arc::clone(&self.clock), limits.rate_limit_per_minute);
        self.backends.insert(
            id,
            Registered {
                backend,
                limiter: Mutex::new(limiter),
                max_attempts: limits.max_attempts.max(1),
            },
        );
        Ok(())
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    /// Generic backend call with pacing and retries. No response caching;
    /// stage-level artifact caching covers these.
    pub fn call(&self, backend_id: &str, request: &WireRequest) -> Result<WireResponse, GatewayError> {
        let registered = self
            .backends
            .get(backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(backend_id.to_string()))?;
        self.call_with_retries(registered, request)
    }

    /// Text generation with caching. The cache key covers backend id,
    /// prompt digest, temperature bits, and max_output_chars; changing any
    /// of them misses.
    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        if req.prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let registered = self
            .backends
            .get(&req.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(req.backend_id.clone()))?;

        let cache_key = self.generation_cache_key(req);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.load::<CachedText>(&cache_key)? {
                return Ok(GenerationResponse {
                    text: hit.text,
                    backend_id: req.backend_id.clone(),
                    latency_ms: 0,
                    cached: true,
                });
            }
        }

        let wire = WireRequest::Generate {
            prompt: req.prompt.clone(),
            temperature: req.temperature,
            max_output_chars: req.max_output_chars,
            context: req.context.clone(),
        };
        let started = self.clock.now_ms();
        let text = self.call_with_retries(registered, &wire)?.into_text()?;
        let latency_ms = self.clock.now_ms().saturating_sub(started);

        if let Some(cache) = &self.cache {
            cache.store(&cache_key, &CachedText { text: text.clone() })?;
        }
        Ok(GenerationResponse {
            text,
            backend_id: req.backend_id.clone(),
            latency_ms,
            cached: false,
        })
    }

    fn generation_cache_key(&self, req: &GenerationRequest) -> String {
        let mut material = Vec::new();
        for part in [
            req.backend_id.as_bytes(),
            sha256_hex(req.prompt.as_bytes()).as_bytes(),
            &req.temperature.to_bits().to_be_bytes()[..],
            &(req.max_output_chars as u64).to_be_bytes()[..],
        ] {
            material.extend_from_slice(&(part.len() as u64).to_be_bytes());
            material.extend_from_slice(part);
        }
        sha256_hex(&material)
    }

    fn call_with_retries(
        &self,
        registered: &Registered,
        request: &WireRequest,
    ) -> Result<WireResponse, GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            registered.limiter.lock().expect("limiter lock").acquire();
            match registered.backend.call(request) {
                Ok(response) => return Ok(response),
                Err(err) if err.retryable && attempt < registered.max_attempts => {
                    let backoff = BACKOFF_BASE_MS << (attempt - 1).min(16);
                    log::warn!(
                        "backend {} attempt {attempt} failed ({err}); retrying in {backoff} ms",
                        registered.backend.id()
                    );
                    self.clock.sleep_ms(backoff);
                }
                Err(err) => {
                    return Err(GatewayError::ExhaustedRetries {
                        backend_id: registered.backend.id().to_string(),
                        attempts: attempt,
                        last_error: err,
                    });
                }
            }
        }
    }
}
