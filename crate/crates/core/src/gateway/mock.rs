//! Deterministic mock backend: a keyed lookup table loaded from a fixture
//! file. With mocks on every stage the whole pipeline is a pure function of
//! its inputs, which is what the golden and determinism tests rely on.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, KnowledgeFields, TextBackend, WireRequest, WireResponse};
use crate::model::sha256_hex;

/// Substring rule for generation prompts: fires when every pattern occurs
/// in the prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRule {
    pub contains_all: Vec<String>,
    pub text: String,
}

/// On-disk mock table.
///
/// `responses` is keyed by request context: `caption:vid/3`, `objects:vid/3`,
/// `ocr:vid/0`, `story:vid`, `task:topic:vid`. Wildcard fallbacks
/// `purpose:vid/*` and `purpose:*` apply in that order. Generation requests
/// that miss `responses` fall through to `llm_by_digest` (exact SHA-256 of
/// the prompt), then `llm_rules` (first match wins), then `llm_default`.
///
/// `fail_times` simulates transient faults: the first N calls whose most
/// specific key matches an entry fail retryably.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub brand: BTreeMap<String, KnowledgeFields>,
    #[serde(default)]
    pub llm_by_digest: BTreeMap<String, String>,
    #[serde(default)]
    pub llm_rules: Vec<PromptRule>,
    #[serde(default)]
    pub llm_default: Option<String>,
    #[serde(default)]
    pub fail_times: BTreeMap<String, u32>,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            BackendError::permanent(format!("cannot read mock fixture {}: {e}", path.display()))
        })?;
        serde_json::from_str(&raw).map_err(|e| {
            BackendError::permanent(format!("malformed mock fixture {}: {e}", path.display()))
        })
    }
}

pub struct MockBackend {
    id: String,
    fixture: MockFixture,
    fail_remaining: Mutex<BTreeMap<String, u32>>,
}

impl MockBackend {
    pub fn new(id: &str, fixture: MockFixture) -> Self {
        let fail_remaining = Mutex::new(fixture.fail_times.clone());
        Self {
            id: id.to_string(),
            fixture,
            fail_remaining,
        }
    }

    pub fn from_file(id: &str, path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(id, MockFixture::load(path)?))
    }

    fn lookup(&self, context_key: &str) -> Option<&str> {
        if let Some(text) = self.fixture.responses.get(context_key) {
            return Some(text);
        }
        // purpose:vid/frame -> purpose:vid/*
        if let Some((scope, _)) = context_key.rsplit_once('/') {
            if let Some(text) = self.fixture.responses.get(&format!("{scope}/*")) {
                return Some(text);
            }
        }
        // purpose:rest -> purpose:*
        let (purpose, _) = context_key.split_once(':')?;
        self.fixture.responses.get(&format!("{purpose}:*")).map(String::as_str)
    }

    fn consume_failure(&self, context_key: &str) -> bool {
        let mut remaining = self.fail_remaining.lock().expect("fail table lock");
        match remaining.get_mut(context_key) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }

    fn resolve_generate(&self, prompt: &str, key: &str) -> Result<String, BackendError> {
        if let Some(text) = self.lookup(key) {
            return Ok(text.to_string());
        }
        if let Some(text) = self.fixture.llm_by_digest.get(&sha256_hex(prompt.as_bytes())) {
            return Ok(text.clone());
        }
        for rule in &self.fixture.llm_rules {
            if rule.contains_all.iter().all(|p| prompt.contains(p.as_str())) {
                return Ok(rule.text.clone());
            }
        }
        if let Some(text) = &self.fixture.llm_default {
            return Ok(text.clone());
        }
        Err(BackendError::permanent(format!(
            "mock {} has no entry for {key} and no matching prompt rule",
            self.id
        )))
    }
}

impl TextBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &WireRequest) -> Result<WireResponse, BackendError> {
        let key = request.context().mock_key();
        if self.consume_failure(&key) {
            return Err(BackendError::transient(format!(
                "mock {}: scripted transient failure for {key}",
                self.id
            )));
        }
        match request {
            WireRequest::Caption { .. } | WireRequest::Ocr { .. } => {
                let text = self.lookup(&key).ok_or_else(|| {
                    BackendError::permanent(format!("mock {} has no entry for {key}", self.id))
                })?;
                Ok(WireResponse::Text(text.to_string()))
            }
            WireRequest::Knowledge { channel, .. } => Ok(WireResponse::Knowledge(
                self.fixture.brand.get(channel).cloned().unwrap_or_default(),
            )),
            WireRequest::Generate { prompt, .. } => {
                Ok(WireResponse::Text(self.resolve_generate(prompt, &key)?))
            }
        }
    }
}
