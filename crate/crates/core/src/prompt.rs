//! Prompt assembly: near-duplicate signal removal and the instruction-first,
//! signals-last story prompt with short/long video branching, plus the
//! self-contained per-task prompts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize;
use crate::model::{PipelineConfig, VideoAsset};
use crate::signals::VerbalBundle;

/// Story instruction wording lives in template files so it can change
/// without a rebuild. These are the built-in copies.
const STORY_INSTRUCTION: &str = include_str!("../templates/story_instruction.txt");
const STORY_INSTRUCTION_BRANDED: &str = include_str!("../templates/story_instruction_branded.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub story_instruction: String,
    pub story_instruction_branded: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            story_instruction: STORY_INSTRUCTION.trim_end().to_string(),
            story_instruction_branded: STORY_INSTRUCTION_BRANDED.trim_end().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads overrides from a directory holding story_instruction.txt and
    /// story_instruction_branded.txt.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name)).map_err(|e| PromptError::Template {
                path: dir.join(name).display().to_string(),
                source: e,
            })
        };
        Ok(Self {
            story_instruction: read("story_instruction.txt")?.trim_end().to_string(),
            story_instruction_branded: read("story_instruction_branded.txt")?
                .trim_end()
                .to_string(),
        })
    }
}

/// A story-generation prompt: instruction, then labeled signal blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryPrompt {
    pub instruction: String,
    pub signal_blocks: Vec<(String, Vec<String>)>,
    pub rendered: String,
    pub char_count: usize,
}

/// A single task prompt. Tasks never see each other's content; only the
/// story text is shared between prompts for the same video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub task_id: String,
    pub description: String,
    pub options: Vec<String>,
    pub story: String,
    pub rendered: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("video {video_id:?}: every signal block is empty, nothing to verbalize")]
    AllSignalsEmpty { video_id: String },

    #[error(
        "instruction alone is {instruction_chars} chars, over the {budget}-char prompt budget"
    )]
    InstructionOverBudget {
        instruction_chars: usize,
        budget: usize,
    },

    #[error("task {task_id:?} needs a non-empty option list")]
    EmptyOptions { task_id: String },

    #[error("cannot read template {path}: {source}")]
    Template {
        path: String,
        source: std::io::Error,
    },
}

fn token_bag(text: &str) -> BTreeMap<String, usize> {
    let mut bag = BTreeMap::new();
    for token in tokenize(text).tokens {
        *bag.entry(token).or_insert(0) += 1;
    }
    bag
}

/// Multiset Jaccard: sum of per-token min counts over sum of max counts.
/// "a red car on a road" vs "a red car on the road" scores 5/7.
fn bag_jaccard(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> f64 {
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (token, &ca) in a {
        let cb = b.get(token).copied().unwrap_or(0);
        intersection += ca.min(cb);
        union += ca.max(cb);
    }
    for (token, &cb) in b {
        if !a.contains_key(token) {
            union += cb;
        }
    }
    if union == 0 {
        return 1.0;
    }
    intersection as f64 / union as f64
}

/// Greedy left-to-right near-duplicate removal: a text is dropped when its
/// Jaccard similarity with any retained earlier text reaches the threshold.
/// Survivor order is preserved.
pub fn dedup_texts(texts: &[String], threshold: f64) -> Vec<String> {
    debug_assert!((0.0..=1.0).contains(&threshold));
    let mut kept: Vec<String> = Vec::new();
    let mut kept_bags: Vec<BTreeMap<String, usize>> = Vec::new();
    for text in texts {
        let bag = token_bag(text);
        let near_duplicate = kept_bags.iter().any(|k| bag_jaccard(k, &bag) >= threshold);
        if !near_duplicate {
            kept.push(text.clone());
            kept_bags.push(bag);
        }
    }
    kept
}

const LABEL_CONTEXT: &str = "Title and brand:";
const LABEL_CAPTIONS: &str = "Frame captions:";
const LABEL_OCR: &str = "On-screen text:";
const LABEL_TRANSCRIPT: &str = "Transcript:";

/// Builds the story prompt. Short videos get every signal; long videos get
/// only frame captions and the transcript. The instruction always comes
/// first and is never truncated; over the character budget, whole trailing
/// lines of the last block are dropped.
pub fn assemble_story_prompt(
    bundle: &VerbalBundle,
    video: &VideoAsset,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
) -> Result<StoryPrompt, PromptError> {
    let is_short = video.duration_s < cfg.short_video_max_s;

    let caption_lines = {
        let texts: Vec<String> = bundle.captions.iter().map(|c| c.caption.clone()).collect();
        let mut lines = dedup_texts(&texts, cfg.dedup_jaccard);
        // The object prompt's findings ride in the captions block so the
        // block order stays fixed.
        let mut seen = std::collections::BTreeSet::new();
        let objects: Vec<String> = bundle
            .captions
            .iter()
            .flat_map(|c| c.objects.iter())
            .filter(|o| seen.insert(o.to_string()))
            .cloned()
            .collect();
        if !objects.is_empty() {
            lines.push(format!("Objects seen: {}", objects.join(", ")));
        }
        lines
    };
    let transcript_lines: Vec<String> = bundle
        .transcript
        .as_ref()
        .map(|t| t.full_text_lines())
        .unwrap_or_default();

    let mut blocks: Vec<(String, Vec<String>)> = Vec::new();
    let signals_present;
    if is_short {
        let mut context_lines = vec![format!("Title: {}", bundle.title)];
        if let Some(company) = &bundle.metadata.company {
            context_lines.push(format!("Company: {company}"));
        }
        if let Some(product_line) = &bundle.metadata.product_line {
            context_lines.push(format!("Product line: {product_line}"));
        }
        if let Some(description) = &bundle.metadata.description {
            context_lines.push(format!("About: {description}"));
        }
        let ocr_lines = if bundle.ocr.words.is_empty() {
            Vec::new()
        } else {
            vec![bundle.ocr.words.join(", ")]
        };
        // Title and metadata are context, not content: with no captions, no
        // on-screen text, and no transcript there is nothing to verbalize.
        signals_present =
            !caption_lines.is_empty() || !ocr_lines.is_empty() || !transcript_lines.is_empty();
        blocks.push((LABEL_CONTEXT.to_string(), context_lines));
        blocks.push((LABEL_CAPTIONS.to_string(), caption_lines));
        blocks.push((LABEL_OCR.to_string(), ocr_lines));
        blocks.push((LABEL_TRANSCRIPT.to_string(), transcript_lines));
    } else {
        signals_present = !caption_lines.is_empty() || !transcript_lines.is_empty();
        blocks.push((LABEL_CAPTIONS.to_string(), caption_lines));
        blocks.push((LABEL_TRANSCRIPT.to_string(), transcript_lines));
    }
    if !signals_present {
        return Err(PromptError::AllSignalsEmpty {
            video_id: bundle.video_id.clone(),
        });
    }
    blocks.retain(|(_, lines)| !lines.is_empty());

    let instruction = match (&bundle.metadata.company, &video.channel) {
        _ if bundle.metadata.is_empty() || !is_short => templates.story_instruction.clone(),
        (Some(company), _) => templates
            .story_instruction_branded
            .replace("{{brand}}", company),
        (None, Some(channel)) => templates
            .story_instruction_branded
            .replace("{{brand}}", channel),
        (None, None) => templates.story_instruction.clone(),
    };
    let instruction_chars = instruction.chars().count();
    let budget = cfg.prompt_char_budget;
    if instruction_chars > budget {
        return Err(PromptError::InstructionOverBudget {
            instruction_chars,
            budget,
        });
    }

    // Over budget: drop whole trailing lines of the last block, removing a
    // block once emptied. The instruction is never touched.
    let mut rendered = render(&instruction, &blocks);
    while rendered.chars().count() > budget {
        let Some((_, lines)) = blocks.last_mut() else {
            break;
        };
        lines.pop();
        if lines.is_empty() {
            blocks.pop();
        }
        rendered = render(&instruction, &blocks);
    }

    let char_count = rendered.chars().count();
    Ok(StoryPrompt {
        instruction,
        signal_blocks: blocks,
        rendered,
        char_count,
    })
}

fn render(instruction: &str, blocks: &[(String, Vec<String>)]) -> String {
    let mut out = instruction.to_string();
    for (label, lines) in blocks {
        out.push_str("\n\n");
        out.push_str(label);
        for line in lines {
            out.push('\n');
            out.push_str(line);
        }
    }
    out
}

/// Builds one self-contained task prompt: description, options (when the
/// task has a closed answer set), story, answer cue. `options: None` is the
/// free-generation branch; `Some` but empty is an error.
pub fn assemble_task_prompt(
    task_id: &str,
    description: &str,
    options: Option<&[String]>,
    story: &str,
    answer_cue: &str,
) -> Result<TaskPrompt, PromptError> {
    if options.is_some_and(|o| o.is_empty()) {
        return Err(PromptError::EmptyOptions {
            task_id: task_id.to_string(),
        });
    }
    let mut rendered = description.to_string();
    if let Some(options) = options {
        rendered.push_str("\n\nOptions:");
        for option in options {
            rendered.push_str("\n- ");
            rendered.push_str(option);
        }
    }
    rendered.push_str("\n\nStory:\n");
    rendered.push_str(story);
    rendered.push_str("\n\n");
    rendered.push_str(answer_cue);
    Ok(TaskPrompt {
        task_id: task_id.to_string(),
        description: description.to_string(),
        options: options.map(<[String]>::to_vec).unwrap_or_default(),
        story: story.to_string(),
        rendered,
    })
}
