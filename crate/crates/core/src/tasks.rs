//! Story generation and the downstream tasks: topic, emotion (raw and
//! clubbed), persuasion strategy, action/reason retrieval, and
//! action/reason generation, including label parsing and prediction
//! persistence.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    BackendError, Gateway, GatewayError, GenerationRequest, RequestContext, TextBackend,
    WireRequest, WireResponse, DEFAULT_MAX_OUTPUT_CHARS,
};
use crate::model::{sha256_hex, PipelineConfig, VideoAsset};
use crate::prompt::{assemble_story_prompt, assemble_task_prompt, PromptError, PromptTemplates};
use crate::signals::VerbalBundle;

const TOPICS_JSON: &str = include_str!("../data/topics.json");
const EMOTIONS_JSON: &str = include_str!("../data/emotions.json");
const STRATEGIES_JSON: &str = include_str!("../data/strategies.json");
const TAXONOMY_JSON: &str = include_str!("../data/emotion_taxonomy.json");
const TASKS_JSON: &str = include_str!("../data/tasks.json");

/// Retrieval instances present one ground truth among this many options.
pub const RETRIEVAL_OPTIONS: usize = 30;

/// The clubbed emotion categories, in the canonical order used for prompts.
pub const EMOTION_CATEGORIES: [&str; 7] = [
    "joy",
    "trust",
    "fear",
    "anger",
    "disgust",
    "anticipation",
    "unclear",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Topic,
    Emotion,
    EmotionClubbed,
    Persuasion,
    ActionRetrieval,
    ReasonRetrieval,
    ActionGen,
    ReasonGen,
    ReasonGivenAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Retrieval,
    Generation,
}

impl TaskId {
    pub const ALL: [TaskId; 9] = [
        TaskId::Topic,
        TaskId::Emotion,
        TaskId::EmotionClubbed,
        TaskId::Persuasion,
        TaskId::ActionRetrieval,
        TaskId::ReasonRetrieval,
        TaskId::ActionGen,
        TaskId::ReasonGen,
        TaskId::ReasonGivenAction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Topic => "topic",
            TaskId::Emotion => "emotion",
            TaskId::EmotionClubbed => "emotion_clubbed",
            TaskId::Persuasion => "persuasion",
            TaskId::ActionRetrieval => "action_retrieval",
            TaskId::ReasonRetrieval => "reason_retrieval",
            TaskId::ActionGen => "action_gen",
            TaskId::ReasonGen => "reason_gen",
            TaskId::ReasonGivenAction => "reason_given_action",
        }
    }

    pub fn parse(name: &str) -> Option<TaskId> {
        TaskId::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn kind(self) -> TaskKind {
        match self {
            TaskId::Topic | TaskId::Emotion | TaskId::EmotionClubbed | TaskId::Persuasion => {
                TaskKind::Classification
            }
            TaskId::ActionRetrieval | TaskId::ReasonRetrieval => TaskKind::Retrieval,
            TaskId::ActionGen | TaskId::ReasonGen | TaskId::ReasonGivenAction => {
                TaskKind::Generation
            }
        }
    }
}

/// Raw emotion label to clubbed category, nearness on the emotion wheel.
/// Category names map to themselves so clubbing is idempotent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionTaxonomy {
    mapping: BTreeMap<String, String>,
}

impl EmotionTaxonomy {
    pub fn from_json(json: &str) -> Result<Self, TaskError> {
        let mapping: BTreeMap<String, String> =
            serde_json::from_str(json).map_err(|e| TaskError::DataFile {
                name: "emotion taxonomy".to_string(),
                reason: e.to_string(),
            })?;
        for (raw, category) in &mapping {
            if !EMOTION_CATEGORIES.contains(&category.as_str()) {
                return Err(TaskError::DataFile {
                    name: "emotion taxonomy".to_string(),
                    reason: format!("label {raw:?} maps to unknown category {category:?}"),
                });
            }
        }
        Ok(Self { mapping })
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let json = std::fs::read_to_string(path).map_err(|e| TaskError::DataFile {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&json)
    }

    /// Clubs a raw label; unmapped labels are an error.
    pub fn club(&self, raw: &str) -> Result<&str, TaskError> {
        self.mapping
            .get(&raw.trim().to_lowercase())
            .map(String::as_str)
            .ok_or_else(|| TaskError::UnmappedEmotion {
                label: raw.to_string(),
            })
    }

    /// Ingestion-side clubbing: open-vocabulary labels outside the map are
    /// routed to "unclear" with a warning instead of failing the run.
    pub fn club_or_unclear(&self, raw: &str) -> &str {
        self.club(raw).unwrap_or_else(|_| {
            log::warn!("emotion label {raw:?} is not in the taxonomy, treating as unclear");
            "unclear"
        })
    }

    pub fn contains(&self, raw: &str) -> bool {
        self.mapping.contains_key(&raw.trim().to_lowercase())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct TaskText {
    id: String,
    description: String,
    answer_cue: String,
}

/// Label sets and task wording, shipped as editable data files.
#[derive(Debug, Clone)]
pub struct TaskCatalog {
    pub topics: Vec<String>,
    pub emotions: Vec<String>,
    pub strategies: Vec<String>,
    pub taxonomy: EmotionTaxonomy,
    texts: BTreeMap<String, TaskText>,
}

impl TaskCatalog {
    pub fn builtin() -> Self {
        Self::from_parts(
            TOPICS_JSON,
            EMOTIONS_JSON,
            STRATEGIES_JSON,
            TAXONOMY_JSON,
            TASKS_JSON,
        )
        .expect("built-in task data is well-formed")
    }

    pub fn from_parts(
        topics: &str,
        emotions: &str,
        strategies: &str,
        taxonomy: &str,
        tasks: &str,
    ) -> Result<Self, TaskError> {
        let list = |name: &str, json: &str| -> Result<Vec<String>, TaskError> {
            serde_json::from_str(json).map_err(|e| TaskError::DataFile {
                name: name.to_string(),
                reason: e.to_string(),
            })
        };
        let texts_list: Vec<TaskText> =
            serde_json::from_str(tasks).map_err(|e| TaskError::DataFile {
                name: "task texts".to_string(),
                reason: e.to_string(),
            })?;
        let mut texts = BTreeMap::new();
        for text in texts_list {
            if TaskId::parse(&text.id).is_none() {
                return Err(TaskError::DataFile {
                    name: "task texts".to_string(),
                    reason: format!("unknown task id {:?}", text.id),
                });
            }
            texts.insert(text.id.clone(), text);
        }
        for task in TaskId::ALL {
            if !texts.contains_key(task.name()) {
                return Err(TaskError::DataFile {
                    name: "task texts".to_string(),
                    reason: format!("missing task id {:?}", task.name()),
                });
            }
        }
        Ok(Self {
            topics: list("topics", topics)?,
            emotions: list("emotions", emotions)?,
            strategies: list("strategies", strategies)?,
            taxonomy: EmotionTaxonomy::from_json(taxonomy)?,
            texts,
        })
    }

    /// Loads overrides from a directory holding the five data files by
    /// their canonical names.
    pub fn load(dir: &Path) -> Result<Self, TaskError> {
        let read = |name: &str| -> Result<String, TaskError> {
            std::fs::read_to_string(dir.join(name)).map_err(|e| TaskError::DataFile {
                name: dir.join(name).display().to_string(),
                reason: e.to_string(),
            })
        };
        Self::from_parts(
            &read("topics.json")?,
            &read("emotions.json")?,
            &read("strategies.json")?,
            &read("emotion_taxonomy.json")?,
            &read("tasks.json")?,
        )
    }

    /// The task spec for a classification or generation task. Retrieval
    /// specs need per-video options; see retrieval_spec.
    pub fn spec(&self, task: TaskId) -> Result<TaskSpec, TaskError> {
        let text = &self.texts[task.name()];
        let options = match task {
            TaskId::Topic => Some(self.topics.clone()),
            TaskId::Emotion => Some(self.emotions.clone()),
            TaskId::EmotionClubbed => {
                Some(EMOTION_CATEGORIES.iter().map(|c| c.to_string()).collect())
            }
            TaskId::Persuasion => Some(self.strategies.clone()),
            TaskId::ActionGen | TaskId::ReasonGen | TaskId::ReasonGivenAction => None,
            TaskId::ActionRetrieval | TaskId::ReasonRetrieval => {
                return Err(TaskError::RetrievalNeedsOptions { task })
            }
        };
        Ok(TaskSpec {
            task_id: task,
            description: text.description.clone(),
            answer_cue: text.answer_cue.clone(),
            options,
        })
    }

    /// The task spec for a retrieval task over a prepared 30-option list.
    pub fn retrieval_spec(
        &self,
        task: TaskId,
        options: Vec<String>,
    ) -> Result<TaskSpec, TaskError> {
        if task.kind() != TaskKind::Retrieval {
            return Err(TaskError::WrongKind {
                task,
                expected: "retrieval",
            });
        }
        if options.len() != RETRIEVAL_OPTIONS {
            return Err(TaskError::BadOptionCount {
                task,
                got: options.len(),
            });
        }
        let text = &self.texts[task.name()];
        Ok(TaskSpec {
            task_id: task,
            description: text.description.clone(),
            answer_cue: text.answer_cue.clone(),
            options: Some(options),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub description: String,
    pub answer_cue: String,
    pub options: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStory {
    pub video_id: String,
    pub text: String,
    /// Whitespace-token count of text.
    pub word_count: usize,
    pub request: GenerationRequest,
}

/// One task outcome. Classification and retrieval populate label (always a
/// member of the option list); generation populates text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub task_id: TaskId,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    pub raw_response: String,
    pub backend_id: String,
    pub prompt_digest: String,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("video {video_id:?}: backend returned an empty story")]
    EmptyStory { video_id: String },

    #[error("video {video_id:?} task {task:?}: backend returned empty text")]
    EmptyResponse { video_id: String, task: &'static str },

    #[error("emotion label {label:?} is not in the taxonomy")]
    UnmappedEmotion { label: String },

    #[error("retrieval pool has {have} usable candidates, need {need}")]
    InsufficientPool { have: usize, need: usize },

    #[error("task {task:?} requires an accompanying action statement")]
    MissingContext { task: &'static str },

    #[error("video {video_id:?}: no gold {what} in the dataset labels")]
    MissingStatements {
        video_id: String,
        what: &'static str,
    },

    #[error("task {task:?} is not a {expected} task")]
    WrongKind {
        task: TaskId,
        expected: &'static str,
    },

    #[error("retrieval task {task:?} needs per-video options")]
    RetrievalNeedsOptions { task: TaskId },

    #[error("task {task:?} got {got} options, retrieval uses exactly 30")]
    BadOptionCount { task: TaskId, got: usize },

    #[error(
        "video {video_id:?} task {task:?}: answer {raw:?} matches no option and the label set has no unclear fallback"
    )]
    UnparsableAnswer {
        video_id: String,
        task: &'static str,
        raw: String,
    },

    #[error("data file {name}: {reason}")]
    DataFile { name: String, reason: String },

    #[error("video {video_id:?}: {source}")]
    Backend {
        video_id: String,
        source: GatewayError,
    },

    #[error(transparent)]
    Prompt(#[from] PromptError),

    #[error("predictions file {path}: {reason}")]
    PredictionsFile { path: String, reason: String },
}

/// Generates the story for one video from its signal bundle.
pub fn generate_story(
    bundle: &VerbalBundle,
    video: &VideoAsset,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<GeneratedStory, TaskError> {
    let prompt = assemble_story_prompt(bundle, video, cfg, templates)?;
    let request = GenerationRequest {
        prompt: prompt.rendered,
        temperature: cfg.story_temperature,
        max_output_chars: DEFAULT_MAX_OUTPUT_CHARS,
        backend_id: backend_id.to_string(),
        context: RequestContext::new(&video.video_id, None, "story"),
    };
    let response = gateway.generate(&request).map_err(|source| TaskError::Backend {
        video_id: video.video_id.clone(),
        source,
    })?;
    if response.text.trim().is_empty() {
        return Err(TaskError::EmptyStory {
            video_id: video.video_id.clone(),
        });
    }
    Ok(GeneratedStory {
        video_id: video.video_id.clone(),
        word_count: response.text.split_whitespace().count(),
        text: response.text,
        request,
    })
}

/// Three-stage answer parsing: exact match after case-folding and edge
/// punctuation trimming; then unique case-insensitive substring (longest
/// option wins, ties are ambiguous); else unknown (None).
pub fn parse_label(raw: &str, options: &[String]) -> Option<String> {
    let folded = raw
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase();
    for option in options {
        if option.to_lowercase() == folded {
            return Some(option.clone());
        }
    }

    let raw_lower = raw.to_lowercase();
    let hits: Vec<&String> = options
        .iter()
        .filter(|o| raw_lower.contains(&o.to_lowercase()))
        .collect();
    let longest = hits.iter().map(|o| o.chars().count()).max()?;
    let mut winners = hits
        .iter()
        .filter(|o| o.chars().count() == longest);
    match (winners.next(), winners.next()) {
        (Some(winner), None) => Some((*winner).clone()),
        _ => None,
    }
}

/// Runs one classification or retrieval task on a story. The returned label
/// is always a member of the option list: unparsable answers fall back to
/// the option spelled "unclear" when the label set has one.
pub fn classify(
    spec: &TaskSpec,
    story: &GeneratedStory,
    cfg: &PipelineConfig,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<Prediction, TaskError> {
    if spec.task_id.kind() == TaskKind::Generation {
        return Err(TaskError::WrongKind {
            task: spec.task_id,
            expected: "classification or retrieval",
        });
    }
    let options = spec.options.as_deref().unwrap_or(&[]);
    let prompt = assemble_task_prompt(
        spec.task_id.name(),
        &spec.description,
        Some(options),
        &story.text,
        &spec.answer_cue,
    )?;
    let response = call_task_backend(&prompt.rendered, story, spec.task_id, cfg, gateway, backend_id)?;
    let label = match parse_label(&response.0, options) {
        Some(label) => label,
        None => options
            .iter()
            .find(|o| o.eq_ignore_ascii_case("unclear"))
            .cloned()
            .ok_or_else(|| TaskError::UnparsableAnswer {
                video_id: story.video_id.clone(),
                task: spec.task_id.name(),
                raw: response.0.clone(),
            })?,
    };
    Ok(Prediction {
        video_id: story.video_id.clone(),
        task_id: spec.task_id,
        label: Some(label),
        text: None,
        raw_response: response.0,
        backend_id: response.1,
        prompt_digest: sha256_hex(prompt.rendered.as_bytes()),
    })
}

/// Runs one free-text generation task. reason_given_action substitutes the
/// accompanying action statement into the task description.
pub fn generate_statement(
    spec: &TaskSpec,
    story: &GeneratedStory,
    context: Option<&str>,
    cfg: &PipelineConfig,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<Prediction, TaskError> {
    if spec.task_id.kind() != TaskKind::Generation {
        return Err(TaskError::WrongKind {
            task: spec.task_id,
            expected: "generation",
        });
    }
    if story.text.trim().is_empty() {
        return Err(TaskError::EmptyStory {
            video_id: story.video_id.clone(),
        });
    }
    let description = if spec.task_id == TaskId::ReasonGivenAction {
        let action = context.ok_or(TaskError::MissingContext {
            task: spec.task_id.name(),
        })?;
        spec.description.replace("{{action}}", action)
    } else {
        spec.description.clone()
    };
    let prompt = assemble_task_prompt(
        spec.task_id.name(),
        &description,
        None,
        &story.text,
        &spec.answer_cue,
    )?;
    let response = call_task_backend(&prompt.rendered, story, spec.task_id, cfg, gateway, backend_id)?;
    if response.0.trim().is_empty() {
        return Err(TaskError::EmptyResponse {
            video_id: story.video_id.clone(),
            task: spec.task_id.name(),
        });
    }
    Ok(Prediction {
        video_id: story.video_id.clone(),
        task_id: spec.task_id,
        label: None,
        text: Some(response.0.clone()),
        raw_response: response.0,
        backend_id: response.1,
        prompt_digest: sha256_hex(prompt.rendered.as_bytes()),
    })
}

fn call_task_backend(
    rendered: &str,
    story: &GeneratedStory,
    task: TaskId,
    cfg: &PipelineConfig,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<(String, String), TaskError> {
    let request = GenerationRequest {
        prompt: rendered.to_string(),
        temperature: cfg.task_temperature,
        max_output_chars: DEFAULT_MAX_OUTPUT_CHARS,
        backend_id: backend_id.to_string(),
        context: RequestContext::new(&story.video_id, None, &format!("task:{}", task.name())),
    };
    let response = gateway.generate(&request).map_err(|source| TaskError::Backend {
        video_id: story.video_id.clone(),
        source,
    })?;
    Ok((response.text, response.backend_id))
}

/// Builds the 30-option list for one retrieval instance: 29 distractors
/// sampled without replacement from the pool, plus the target at a seeded
/// uniform position. Pool entries equal to the target and duplicates are
/// discarded first.
pub fn build_retrieval_options(
    target: &str,
    pool: &[String],
    seed: u64,
) -> Result<Vec<String>, TaskError> {
    let need = RETRIEVAL_OPTIONS - 1;
    let mut seen = std::collections::BTreeSet::new();
    let mut candidates: Vec<&String> = pool
        .iter()
        .filter(|s| s.as_str() != target && seen.insert(s.as_str()))
        .collect();
    if candidates.len() < need {
        return Err(TaskError::InsufficientPool {
            have: candidates.len(),
            need,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..need {
        let j = rng.gen_range(i..candidates.len());
        candidates.swap(i, j);
    }
    let mut options: Vec<String> = candidates[..need].iter().map(|s| (*s).clone()).collect();
    let target_at = rng.gen_range(0..RETRIEVAL_OPTIONS);
    options.insert(target_at, target.to_string());
    Ok(options)
}

/// Derives the per-instance seed for retrieval sampling so each (video,
/// task) pair gets its own distractor draw under one run seed.
pub fn retrieval_seed(base: u64, video_id: &str, task: TaskId) -> u64 {
    let digest = sha256_hex(
        format!("retrieval/{base}/{video_id}/{}", task.name()).as_bytes(),
    );
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

/// Writes predictions as line-delimited JSON sorted by (video_id, task_id).
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), TaskError> {
    let io_err = |e: std::io::Error| TaskError::PredictionsFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.video_id, a.task_id.name()).cmp(&(&b.video_id, b.task_id.name()))
    });
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for prediction in sorted {
        let line = serde_json::to_string(prediction).map_err(|e| TaskError::PredictionsFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        writeln!(file, "{line}").map_err(io_err)?;
    }
    file.flush().map_err(io_err)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, TaskError> {
    let file = std::fs::File::open(path).map_err(|e| TaskError::PredictionsFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut predictions = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TaskError::PredictionsFile {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        predictions.push(serde_json::from_str(&line).map_err(|e| {
            TaskError::PredictionsFile {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", i + 1),
            }
        })?);
    }
    Ok(predictions)
}

/// A deterministic offline backend for retrieval-style prompts: answers
/// with the option sharing the most unique tokens with the story section
/// of the prompt. Useful as an oracle when exercising the retrieval
/// protocol without a live model.
pub struct OverlapBackend {
    id: String,
}

impl OverlapBackend {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl TextBackend for OverlapBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &WireRequest) -> Result<WireResponse, BackendError> {
        let WireRequest::Generate { prompt, .. } = request else {
            return Err(BackendError::permanent("overlap backend only generates"));
        };
        let story = prompt
            .split("\nStory:\n")
            .nth(1)
            .map(|s| s.split("\n\n").next().unwrap_or(s))
            .unwrap_or("");
        let story_tokens: std::collections::BTreeSet<String> = crate::metrics::tokenize(story)
            .tokens
            .into_iter()
            .collect();
        let mut best: Option<(usize, &str)> = None;
        for line in prompt.lines() {
            let Some(option) = line.strip_prefix("- ") else {
                continue;
            };
            let overlap = crate::metrics::tokenize(option)
                .tokens
                .iter()
                .collect::<std::collections::BTreeSet<_>>()
                .iter()
                .filter(|t| story_tokens.contains(**t))
                .count();
            // ties keep the earliest option
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, option));
            }
        }
        match best {
            Some((_, option)) => Ok(WireResponse::Text(option.to_string())),
            None => Err(BackendError::permanent("prompt has no option lines")),
        }
    }
}
