//! Shared domain types: video assets, pipeline configuration, run manifests,
//! and content-addressed cache keys.
//!
//! Everything here is an immutable value object after construction and safe
//! to share across workers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A video plus its sidecar signals. The media itself is never fetched by
/// this toolkit; `uri` is a local path or an external URL prepared
/// out-of-band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAsset {
    pub video_id: String,
    pub uri: String,
    pub duration_s: f64,
    pub fps: f64,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    pub is_advertisement: bool,
}

impl VideoAsset {
    /// Checks the per-asset invariants (uniqueness within a corpus is
    /// checked at load time, not here).
    // The negated comparisons are deliberate: NaN fails them.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut violations = Vec::new();
        if self.video_id.is_empty() {
            violations.push(FieldViolation::new("video_id", "must be non-empty"));
        }
        if !(self.duration_s >= 0.0) {
            violations.push(FieldViolation::new("duration_s", "must be >= 0"));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            violations.push(FieldViolation::new("fps", "must be finite and > 0"));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidAsset {
                video_id: self.video_id.clone(),
                violations,
            })
        }
    }
}

/// Scalar knobs for the whole pipeline. The defaults mirror the constants
/// the verbalization method was published with; all of them are overridable
/// so ablations stay runnable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Motion-score cutoff for keyframe selection. The unit is defined by
    /// the flow estimator backend (see the media module for the native
    /// estimator's scaling).
    pub flow_threshold: f64,
    /// Videos strictly shorter than this use the flow-based keyframe path
    /// and the all-signals prompt; longer ones use uniform sampling and the
    /// reduced prompt.
    pub short_video_max_s: f64,
    /// Every n-th frame of the native-fps stream is sent to OCR.
    pub ocr_frame_stride: usize,
    /// Sampling temperature for story generation.
    pub story_temperature: f64,
    /// Sampling temperature for downstream task prompts.
    pub task_temperature: f64,
    /// Upper bound on the number of selected keyframes.
    pub max_keyframes: usize,
    /// Frames with mean luma at or below this are treated as blank (dark).
    pub blank_low_luma: f64,
    /// Frames with mean luma at or above this are treated as blank (white).
    pub blank_high_luma: f64,
    /// Jaccard similarity at or above which two signal texts are considered
    /// duplicates during prompt assembly.
    pub dedup_jaccard: f64,
    /// Hard cap on rendered prompt length, in characters.
    pub prompt_char_budget: usize,
    /// Seed for every randomized step (distractor sampling in particular).
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            flow_threshold: 50.0,
            short_video_max_s: 120.0,
            ocr_frame_stride: 10,
            story_temperature: 0.75,
            task_temperature: 0.3,
            max_keyframes: 20,
            blank_low_luma: 0.02,
            blank_high_luma: 0.98,
            dedup_jaccard: 0.8,
            prompt_char_budget: 12_000,
            rng_seed: 0,
        }
    }
}

/// A single named invariant violation, so errors can report every bad field
/// instead of only the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub field: &'static str,
    pub message: String,
}

impl FieldViolation {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_violations(violations: &[FieldViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {}", join_violations(.violations))]
    InvalidConfig { violations: Vec<FieldViolation> },

    #[error("invalid video asset {video_id:?}: {}", join_violations(.violations))]
    InvalidAsset {
        video_id: String,
        violations: Vec<FieldViolation>,
    },

    #[error("unknown pipeline stage {0:?}")]
    UnknownStage(String),

    #[error("video {video_id:?} stage {stage:?}: status may not move from {from} back to {to}")]
    NonMonotoneStatus {
        video_id: String,
        stage: String,
        from: String,
        to: String,
    },
}

impl ModelError {
    /// The named violations behind an `InvalidConfig`/`InvalidAsset`, if any.
    pub fn violations(&self) -> &[FieldViolation] {
        match self {
            ModelError::InvalidConfig { violations } => violations,
            ModelError::InvalidAsset { violations, .. } => violations,
            _ => &[],
        }
    }
}

/// Validates every invariant and reports all violations at once, keyed by
/// field name.
pub fn validate_config(cfg: &PipelineConfig) -> Result<(), ModelError> {
    let mut violations = Vec::new();

    let finite = [
        ("flow_threshold", cfg.flow_threshold),
        ("short_video_max_s", cfg.short_video_max_s),
        ("story_temperature", cfg.story_temperature),
        ("task_temperature", cfg.task_temperature),
        ("blank_low_luma", cfg.blank_low_luma),
        ("blank_high_luma", cfg.blank_high_luma),
        ("dedup_jaccard", cfg.dedup_jaccard),
    ];
    for (field, value) in finite {
        if !value.is_finite() {
            violations.push(FieldViolation::new(field, "must be finite"));
        }
    }

    if cfg.ocr_frame_stride == 0 {
        violations.push(FieldViolation::new("ocr_frame_stride", "must be >= 1"));
    }
    if cfg.max_keyframes == 0 {
        violations.push(FieldViolation::new("max_keyframes", "must be >= 1"));
    }
    if cfg.prompt_char_budget == 0 {
        violations.push(FieldViolation::new("prompt_char_budget", "must be >= 1"));
    }
    if !(0.0..=2.0).contains(&cfg.story_temperature) {
        violations.push(FieldViolation::new(
            "story_temperature",
            "must be within [0, 2]",
        ));
    }
    if !(0.0..=2.0).contains(&cfg.task_temperature) {
        violations.push(FieldViolation::new(
            "task_temperature",
            "must be within [0, 2]",
        ));
    }
    if !(0.0..=1.0).contains(&cfg.blank_low_luma) {
        violations.push(FieldViolation::new(
            "blank_low_luma",
            "must be within [0, 1]",
        ));
    }
    if !(0.0..=1.0).contains(&cfg.blank_high_luma) {
        violations.push(FieldViolation::new(
            "blank_high_luma",
            "must be within [0, 1]",
        ));
    }
    if cfg.blank_low_luma.is_finite()
        && cfg.blank_high_luma.is_finite()
        && cfg.blank_low_luma >= cfg.blank_high_luma
    {
        violations.push(FieldViolation::new(
            "blank_low_luma",
            "must be strictly below blank_high_luma",
        ));
        violations.push(FieldViolation::new(
            "blank_high_luma",
            "must be strictly above blank_low_luma",
        ));
    }
    if !(0.0..=1.0).contains(&cfg.dedup_jaccard) {
        violations.push(FieldViolation::new(
            "dedup_jaccard",
            "must be within [0, 1]",
        ));
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(ModelError::InvalidConfig { violations })
    }
}

/// Pipeline stages that cache, report status, and bind to backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Keyframes,
    Ocr,
    Captions,
    Metadata,
    Transcript,
    Story,
    Tasks,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Keyframes,
        Stage::Ocr,
        Stage::Captions,
        Stage::Metadata,
        Stage::Transcript,
        Stage::Story,
        Stage::Tasks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Keyframes => "keyframes",
            Stage::Ocr => "ocr",
            Stage::Captions => "captions",
            Stage::Metadata => "metadata",
            Stage::Transcript => "transcript",
            Stage::Story => "story",
            Stage::Tasks => "tasks",
        }
    }

    pub fn parse(name: &str) -> Result<Stage, ModelError> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| ModelError::UnknownStage(name.to_string()))
    }

    /// Whether the stage calls a model backend. Keyframe selection and
    /// transcript ingestion run locally and take no binding.
    pub fn needs_backend(self) -> bool {
        !matches!(self, Stage::Keyframes | Stage::Transcript)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PipelineConfig {
    /// Canonical bytes of only the config fields that influence `stage`.
    ///
    /// The encoding is byte-stable across runs and platforms: fields are
    /// listed in a fixed order and floats are written as their IEEE-754 bit
    /// patterns, so equal values always serialize identically.
    pub fn stage_slice(&self, stage: Stage) -> Vec<u8> {
        let mut out = String::new();
        let push_f64 = |out: &mut String, name: &str, v: f64| {
            out.push_str(name);
            out.push('=');
            out.push_str(&format!("f:{:016x}\n", v.to_bits()));
        };
        let push_usize = |out: &mut String, name: &str, v: usize| {
            out.push_str(name);
            out.push('=');
            out.push_str(&format!("u:{v:x}\n"));
        };
        match stage {
            Stage::Keyframes => {
                push_f64(&mut out, "flow_threshold", self.flow_threshold);
                push_f64(&mut out, "short_video_max_s", self.short_video_max_s);
                push_usize(&mut out, "max_keyframes", self.max_keyframes);
                push_f64(&mut out, "blank_low_luma", self.blank_low_luma);
                push_f64(&mut out, "blank_high_luma", self.blank_high_luma);
            }
            Stage::Ocr => {
                push_usize(&mut out, "ocr_frame_stride", self.ocr_frame_stride);
                // OCR runs only on short videos, so the boundary matters
                push_f64(&mut out, "short_video_max_s", self.short_video_max_s);
            }
            Stage::Captions => {
                // captions depend on which keyframes were chosen
                out.push_str(&String::from_utf8_lossy(
                    &self.stage_slice(Stage::Keyframes),
                ));
            }
            Stage::Metadata => {
                // metadata lookup also runs only on short videos
                push_f64(&mut out, "short_video_max_s", self.short_video_max_s);
            }
            Stage::Transcript => {}
            Stage::Story => {
                push_f64(&mut out, "story_temperature", self.story_temperature);
                push_f64(&mut out, "dedup_jaccard", self.dedup_jaccard);
                push_usize(&mut out, "prompt_char_budget", self.prompt_char_budget);
                push_f64(&mut out, "short_video_max_s", self.short_video_max_s);
            }
            Stage::Tasks => {
                push_f64(&mut out, "task_temperature", self.task_temperature);
                push_usize(&mut out, "rng_seed", self.rng_seed as usize);
            }
        }
        out.into_bytes()
    }
}

/// Content-addressed cache key for one (stage, video) unit of work.
///
/// Pure function of its arguments: equal inputs give equal keys, and any
/// differing byte changes the key (SHA-256 under a length-prefixed framing,
/// so no two input triples can collide by concatenation).
pub fn cache_key(stage: &str, video_id: &str, config_slice: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"storyverb/cache/v1");
    for part in [stage.as_bytes(), video_id.as_bytes(), config_slice] {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    hex_digest(&hasher.finalize())
}

/// Hex-encoded SHA-256 of arbitrary bytes; the digest used throughout for
/// prompt and artifact addressing.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_digest(&hasher.finalize())
}

fn hex_digest(digest: &[u8]) -> String {
    let mut s = String::with_capacity(digest.len() * 2);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Per-(video, stage) progress within one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum StageStatus {
    Pending,
    Cached,
    Done,
    Failed(String),
}

impl StageStatus {
    fn rank(&self) -> u8 {
        match self {
            StageStatus::Pending => 0,
            StageStatus::Cached => 1,
            StageStatus::Done | StageStatus::Failed(_) => 2,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            StageStatus::Pending => "pending",
            StageStatus::Cached => "cached",
            StageStatus::Done => "done",
            StageStatus::Failed(_) => "failed",
        }
    }
}

/// Record of one pipeline invocation: the exact config, the backend bound to
/// each stage, and per-video stage status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: PipelineConfig,
    /// stage name -> backend id
    pub backend_ids: BTreeMap<String, String>,
    /// RFC 3339; honor `SOURCE_DATE_EPOCH` upstream when reproducibility
    /// matters.
    pub created_at: String,
    /// video id -> stage name -> status
    pub videos: BTreeMap<String, BTreeMap<String, StageStatus>>,
}

impl RunManifest {
    pub fn new(
        run_id: impl Into<String>,
        config: PipelineConfig,
        backend_ids: BTreeMap<String, String>,
        created_at: impl Into<String>,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            config,
            backend_ids,
            created_at: created_at.into(),
            videos: BTreeMap::new(),
        }
    }

    pub fn register_video(&mut self, video_id: &str, stages: &[Stage]) {
        let entry = self.videos.entry(video_id.to_string()).or_default();
        for stage in stages {
            entry
                .entry(stage.name().to_string())
                .or_insert(StageStatus::Pending);
        }
    }

    /// Advances a stage status. Transitions are monotone: once a stage is
    /// done or failed it cannot move again, and nothing returns to pending.
    pub fn set_status(
        &mut self,
        video_id: &str,
        stage: Stage,
        status: StageStatus,
    ) -> Result<(), ModelError> {
        let entry = self
            .videos
            .entry(video_id.to_string())
            .or_default()
            .entry(stage.name().to_string())
            .or_insert(StageStatus::Pending);
        if status.rank() < entry.rank() || (entry.rank() == 2 && *entry != status) {
            return Err(ModelError::NonMonotoneStatus {
                video_id: video_id.to_string(),
                stage: stage.name().to_string(),
                from: entry.label().to_string(),
                to: status.label().to_string(),
            });
        }
        *entry = status;
        Ok(())
    }

    /// (done_or_cached, failed, pending) counts across all videos.
    pub fn tally(&self) -> (usize, usize, usize) {
        let mut ok = 0;
        let mut failed = 0;
        let mut pending = 0;
        for stages in self.videos.values() {
            for status in stages.values() {
                match status {
                    StageStatus::Done | StageStatus::Cached => ok += 1,
                    StageStatus::Failed(_) => failed += 1,
                    StageStatus::Pending => pending += 1,
                }
            }
        }
        (ok, failed, pending)
    }
}
