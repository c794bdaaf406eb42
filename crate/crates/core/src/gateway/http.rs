//! Live HTTP backend: one endpoint per backend id, JSON bodies, bearer auth
//! from an environment variable. Adapters for specific provider APIs are
//! deployment config (a thin proxy speaking this wire format), not code
//! paths here.

use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use super::{BackendError, KnowledgeFields, TextBackend, WireRequest, WireResponse};

/// Environment variable that holds the API key for a backend id:
/// `STORYVERB_<ID>_KEY` with the id uppercased and non-alphanumerics
/// mapped to underscores. Keys are never read from config files or disk.
pub fn auth_env_var(backend_id: &str) -> String {
    let id: String = backend_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("STORYVERB_{id}_KEY")
}

pub struct HttpBackend {
    id: String,
    endpoint: String,
    auth_env: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct TextBody {
    text: String,
}

impl HttpBackend {
    pub fn new(id: &str, endpoint: &str, auth_env: Option<&str>) -> Self {
        Self {
            id: id.to_string(),
            endpoint: endpoint.to_string(),
            auth_env: auth_env
                .map(str::to_string)
                .unwrap_or_else(|| auth_env_var(id)),
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(120))
                .build()
                .expect("HTTP client construction"),
        }
    }

    fn body_for(request: &WireRequest) -> serde_json::Value {
        let b64 = |bytes: &[u8]| base64::engine::general_purpose::STANDARD.encode(bytes);
        match request {
            WireRequest::Caption {
                image_png, prompt, ..
            } => json!({ "image": b64(image_png), "prompt": prompt }),
            WireRequest::Ocr { image_png, .. } => json!({ "image": b64(image_png) }),
            WireRequest::Knowledge { channel, .. } => json!({ "channel": channel }),
            WireRequest::Generate {
                prompt,
                temperature,
                max_output_chars,
                ..
            } => json!({
                "prompt": prompt,
                "temperature": temperature,
                "max_output_chars": max_output_chars,
            }),
        }
    }
}

impl TextBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &WireRequest) -> Result<WireResponse, BackendError> {
        let mut builder = self.client.post(&self.endpoint).json(&Self::body_for(request));
        if let Ok(key) = std::env::var(&self.auth_env) {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| BackendError {
            message: format!("backend {}: transport error: {e}", self.id),
            // connection refused / timeout are worth retrying
            retryable: true,
        })?;

        let status = response.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err(BackendError {
                message: format!("backend {}: HTTP {status}", self.id),
                retryable,
            });
        }

        let raw = response.text().map_err(|e| BackendError {
            message: format!("backend {}: body read error: {e}", self.id),
            retryable: true,
        })?;
        match request {
            WireRequest::Knowledge { .. } => {
                let fields: KnowledgeFields = serde_json::from_str(&raw).map_err(|e| {
                    BackendError::permanent(format!(
                        "backend {}: malformed knowledge response: {e}",
                        self.id
                    ))
                })?;
                Ok(WireResponse::Knowledge(fields))
            }
            _ => {
                let body: TextBody = serde_json::from_str(&raw).map_err(|e| {
                    BackendError::permanent(format!(
                        "backend {}: malformed text response: {e}",
                        self.id
                    ))
                })?;
                Ok(WireResponse::Text(body.text))
            }
        }
    }
}
