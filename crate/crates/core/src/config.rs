//! Run configuration: one TOML file holding the pipeline knobs, dataset
//! roots, the backend registry, and stage-to-backend wiring.
//!
//! Every leaf is overridable from the command line by its dotted path
//! (`pipeline.flow_threshold`, `stages.story`, `backends.live.endpoint`).
//! Relative paths inside the file resolve against the file's directory;
//! paths supplied as overrides resolve against the working directory.
//! API keys never appear here: an HTTP backend reads its key from the
//! environment variable named by `auth_env` (default `STORYVERB_<ID>_KEY`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DatasetName;
use crate::gateway::{BackendLimits, Clock, Gateway, GatewayError, HttpBackend, MockBackend};
use crate::model::{validate_config, PipelineConfig, Stage};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("config {path}: {message}")]
    Parse { path: String, message: String },

    /// Every violated rule, one line per issue, gathered before execution.
    #[error("invalid config:\n{}", .issues.join("\n"))]
    Invalid { issues: Vec<String> },

    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },

    #[error("config key {key:?}: {reason}")]
    BadValue { key: String, reason: String },

    #[error("no dataset root configured for {0:?}")]
    UnknownDataset(String),

    #[error("stage {0:?} has no backend bound (add it under [stages])")]
    UnboundStage(String),

    #[error("backend {id}: {source}")]
    Fixture {
        id: String,
        source: crate::gateway::BackendError,
    },

    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// How a backend id is served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

impl BackendKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "mock" => Some(BackendKind::Mock),
            "http" => Some(BackendKind::Http),
            _ => None,
        }
    }
}

/// One entry of the backend registry. `fixture` applies to mock backends,
/// `endpoint`/`auth_env` to HTTP backends; setting a field the kind does
/// not use is rejected as a likely typo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    /// Requests per minute; 0 disables pacing.
    #[serde(default)]
    pub rate_limit_per_minute: u32,
    /// Total attempts per call (first try plus retries).
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

fn default_max_attempts() -> u32 {
    BackendLimits::default().max_attempts
}

impl BackendConfig {
    fn limits(&self) -> BackendLimits {
        BackendLimits {
            rate_limit_per_minute: self.rate_limit_per_minute,
            max_attempts: self.max_attempts,
        }
    }
}

/// The whole run configuration. A missing section takes its default; an
/// unknown key anywhere is a parse error, not a silent ignore.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub pipeline: PipelineConfig,
    /// dataset name -> root directory
    pub datasets: BTreeMap<String, PathBuf>,
    /// backend id -> how to reach it
    pub backends: BTreeMap<String, BackendConfig>,
    /// stage name -> backend id, for the stages that call a backend
    pub stages: BTreeMap<String, String>,
    /// Response-cache directory; unset disables cross-run caching.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Config {
    /// Parses a TOML file and resolves its relative paths against the
    /// file's directory. Call [`Config::validate`] before running.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut config: Config = toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for root in config.datasets.values_mut() {
            *root = resolve(base, root);
        }
        for backend in config.backends.values_mut() {
            if let Some(fixture) = &mut backend.fixture {
                *fixture = resolve(base, fixture);
            }
        }
        if let Some(dir) = &mut config.cache_dir {
            *dir = resolve(base, dir);
        }
        Ok(config)
    }

    /// Applies one `--key value` command-line override by its dotted path.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let unknown = || ConfigError::UnknownKey {
            key: key.to_string(),
        };
        let bad = |reason: String| ConfigError::BadValue {
            key: key.to_string(),
            reason,
        };
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["pipeline", field] => {
                let p = &mut self.pipeline;
                macro_rules! num {
                    ($slot:expr, $ty:ty) => {
                        $slot = value
                            .parse::<$ty>()
                            .map_err(|e| bad(format!("expected a {}: {e}", stringify!($ty))))?
                    };
                }
                match *field {
                    "flow_threshold" => num!(p.flow_threshold, f64),
                    "short_video_max_s" => num!(p.short_video_max_s, f64),
                    "ocr_frame_stride" => num!(p.ocr_frame_stride, usize),
                    "story_temperature" => num!(p.story_temperature, f64),
                    "task_temperature" => num!(p.task_temperature, f64),
                    "max_keyframes" => num!(p.max_keyframes, usize),
                    "blank_low_luma" => num!(p.blank_low_luma, f64),
                    "blank_high_luma" => num!(p.blank_high_luma, f64),
                    "dedup_jaccard" => num!(p.dedup_jaccard, f64),
                    "prompt_char_budget" => num!(p.prompt_char_budget, usize),
                    "rng_seed" => num!(p.rng_seed, u64),
                    _ => return Err(unknown()),
                }
            }
            ["datasets", name] => {
                self.datasets
                    .insert(name.to_string(), PathBuf::from(value));
            }
            ["stages", stage] => {
                self.stages.insert(stage.to_string(), value.to_string());
            }
            ["backends", id, field] => {
                let entry = self
                    .backends
                    .entry(id.to_string())
                    .or_insert_with(|| BackendConfig {
                        kind: BackendKind::Mock,
                        fixture: None,
                        endpoint: None,
                        auth_env: None,
                        rate_limit_per_minute: 0,
                        max_attempts: default_max_attempts(),
                    });
                match *field {
                    "kind" => {
                        entry.kind = BackendKind::parse(value)
                            .ok_or_else(|| bad("expected mock or http".to_string()))?
                    }
                    "fixture" => entry.fixture = Some(PathBuf::from(value)),
                    "endpoint" => entry.endpoint = Some(value.to_string()),
                    "auth_env" => entry.auth_env = Some(value.to_string()),
                    "rate_limit_per_minute" => {
                        entry.rate_limit_per_minute = value
                            .parse()
                            .map_err(|e| bad(format!("expected a u32: {e}")))?
                    }
                    "max_attempts" => {
                        entry.max_attempts = value
                            .parse()
                            .map_err(|e| bad(format!("expected a u32: {e}")))?
                    }
                    _ => return Err(unknown()),
                }
            }
            ["cache_dir"] => self.cache_dir = Some(PathBuf::from(value)),
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Checks every rule and reports all violations at once: pipeline
    /// invariants, per-kind backend fields, stage bindings, dataset names.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();

        if let Err(e) = validate_config(&self.pipeline) {
            for v in e.violations() {
                issues.push(format!("pipeline.{v}"));
            }
        }

        for name in self.datasets.keys() {
            if DatasetName::parse(name).is_none() {
                issues.push(format!(
                    "datasets.{name}: unknown dataset (expected video_story, video_ads, or persuasion)"
                ));
            }
        }

        for (id, backend) in &self.backends {
            match backend.kind {
                BackendKind::Mock => {
                    if backend.fixture.is_none() {
                        issues.push(format!("backends.{id}.fixture: required for kind mock"));
                    }
                    for (field, set) in [
                        ("endpoint", backend.endpoint.is_some()),
                        ("auth_env", backend.auth_env.is_some()),
                    ] {
                        if set {
                            issues.push(format!(
                                "backends.{id}.{field}: not used by kind mock"
                            ));
                        }
                    }
                }
                BackendKind::Http => {
                    if backend.endpoint.is_none() {
                        issues.push(format!("backends.{id}.endpoint: required for kind http"));
                    }
                    if backend.fixture.is_some() {
                        issues.push(format!("backends.{id}.fixture: not used by kind http"));
                    }
                }
            }
            if backend.max_attempts == 0 {
                issues.push(format!("backends.{id}.max_attempts: must be >= 1"));
            }
        }

        for (stage, backend_id) in &self.stages {
            match Stage::parse(stage) {
                Err(_) => issues.push(format!("stages.{stage}: unknown stage")),
                Ok(s) if !s.needs_backend() => {
                    issues.push(format!("stages.{stage}: stage runs locally, takes no backend"))
                }
                Ok(_) => {
                    if !self.backends.contains_key(backend_id) {
                        issues.push(format!(
                            "stages.{stage}: backend {backend_id:?} is not defined under [backends]"
                        ));
                    }
                }
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { issues })
        }
    }

    /// Root directory of a configured dataset.
    pub fn dataset_root(&self, name: DatasetName) -> Result<&Path, ConfigError> {
        self.datasets
            .get(name.name())
            .map(PathBuf::as_path)
            .ok_or_else(|| ConfigError::UnknownDataset(name.name().to_string()))
    }

    /// Backend id bound to a stage.
    pub fn stage_backend(&self, stage: Stage) -> Result<&str, ConfigError> {
        self.stages
            .get(stage.name())
            .map(String::as_str)
            .ok_or_else(|| ConfigError::UnboundStage(stage.name().to_string()))
    }

    /// Builds the gateway with every configured backend registered.
    pub fn build_gateway(&self, clock: Arc<dyn Clock>) -> Result<Gateway, ConfigError> {
        let mut gateway = Gateway::new(clock);
        for (id, backend) in &self.backends {
            match backend.kind {
                BackendKind::Mock => {
                    let fixture = backend.fixture.as_deref().ok_or_else(|| {
                        ConfigError::Invalid {
                            issues: vec![format!("backends.{id}.fixture: required for kind mock")],
                        }
                    })?;
                    let mock = MockBackend::from_file(id, fixture).map_err(|e| {
                        ConfigError::Fixture {
                            id: id.clone(),
                            source: e,
                        }
                    })?;
                    gateway.register_backend(Box::new(mock), backend.limits())?;
                }
                BackendKind::Http => {
                    let endpoint = backend.endpoint.as_deref().ok_or_else(|| {
                        ConfigError::Invalid {
                            issues: vec![format!("backends.{id}.endpoint: required for kind http")],
                        }
                    })?;
                    let http = HttpBackend::new(id, endpoint, backend.auth_env.as_deref());
                    gateway.register_backend(Box::new(http), backend.limits())?;
                }
            }
        }
        Ok(gateway)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
