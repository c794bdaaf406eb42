//! Textual signal extraction: frame captions (two fixed prompts), on-screen
//! text as unique words, subtitle transcripts, and brand metadata from a
//! knowledge-base backend.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, RequestContext, WireRequest};
use crate::media::{FrameSource, KeyframeSet, MediaError};
use crate::model::VideoAsset;

/// The two captioner prompts sent per keyframe.
pub const CAPTION_PROMPT: &str = "Caption this image";
pub const OBJECTS_PROMPT: &str = "Can you tell the objects that are present in the image?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCaption {
    pub frame_index: usize,
    pub caption: String,
    /// Deduplicated, lowercase.
    pub objects: Vec<String>,
}

/// On-screen words in first-occurrence order, case-folded, edge punctuation
/// stripped, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OcrWords {
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub start_s: f64,
    pub dur_s: f64,
    pub text: String,
}

/// Subtitle segments sorted by start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub segments: Vec<TranscriptSegment>,
}

impl Transcript {
    pub fn full_text_lines(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.text.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataSource {
    KnowledgeBase,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrandMetadata {
    pub company: Option<String>,
    pub product_line: Option<String>,
    pub description: Option<String>,
    pub source: MetadataSource,
}

impl BrandMetadata {
    pub fn none() -> Self {
        Self {
            company: None,
            product_line: None,
            description: None,
            source: MetadataSource::None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.company.is_none() && self.product_line.is_none() && self.description.is_none()
    }
}

/// Every textual signal of one video, ready for prompt assembly. A pure
/// function of the video's signals and backend responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalBundle {
    pub video_id: String,
    pub title: String,
    pub metadata: BrandMetadata,
    pub captions: Vec<FrameCaption>,
    pub ocr: OcrWords,
    pub transcript: Option<Transcript>,
}

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("video {video_id:?}: captioning failed on all {total} keyframes; last error: {last}")]
    AllCaptionsFailed {
        video_id: String,
        total: usize,
        last: String,
    },

    #[error("subtitle file {path} line {line}: {reason}")]
    MalformedSubtitle {
        path: String,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Media(#[from] MediaError),

    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Lowercases and strips terminal punctuation from both edges; interior
/// symbols survive, so "50%" stays "50%" while "End." becomes "end".
pub fn normalize_ocr_token(token: &str) -> String {
    const EDGE_PUNCT: &[char] = &[
        '.', ',', ';', ':', '!', '?', '\'', '"', '`', '(', ')', '[', ']', '{', '}', '<', '>',
        '«', '»',
    ];
    token.trim_matches(EDGE_PUNCT).to_lowercase()
}

/// Captions every keyframe with the two fixed prompts. Per-frame backend
/// failures are logged and skipped; only a total wipeout is an error.
pub fn caption_frames(
    video: &VideoAsset,
    keyframes: &KeyframeSet,
    source: &dyn FrameSource,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<Vec<FrameCaption>, SignalError> {
    let mut captions = Vec::with_capacity(keyframes.frames.len());
    let mut last_error = String::new();
    for frame in &keyframes.frames {
        let image_png = source.frame_png(frame.index)?;
        let ask = |prompt: &str, purpose: &str| {
            gateway.call(
                backend_id,
                &WireRequest::Caption {
                    image_png: image_png.clone(),
                    prompt: prompt.to_string(),
                    context: RequestContext::new(&video.video_id, Some(frame.index), purpose),
                },
            )
        };
        let caption = ask(CAPTION_PROMPT, "caption").and_then(|r| r.into_text());
        let objects = ask(OBJECTS_PROMPT, "objects").and_then(|r| r.into_text());
        match (caption, objects) {
            (Ok(caption), Ok(objects_text)) => {
                captions.push(FrameCaption {
                    frame_index: frame.index,
                    caption,
                    objects: parse_objects(&objects_text),
                });
            }
            (caption, objects) => {
                let err = caption.err().or(objects.err()).expect("one side failed");
                log::warn!(
                    "video {} frame {}: captioning failed: {err}",
                    video.video_id,
                    frame.index
                );
                last_error = err.to_string();
            }
        }
    }
    if captions.is_empty() && !keyframes.frames.is_empty() {
        return Err(SignalError::AllCaptionsFailed {
            video_id: video.video_id.clone(),
            total: keyframes.frames.len(),
            last: last_error,
        });
    }
    Ok(captions)
}

/// Splits a backend's object list on commas/newlines, lowercases, and
/// deduplicates preserving order.
fn parse_objects(text: &str) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for piece in text.split([',', '\n']) {
        let obj = piece.trim().to_lowercase();
        if !obj.is_empty() && seen.insert(obj.clone()) {
            out.push(obj);
        }
    }
    out
}

/// Runs OCR over the sampled frames and keeps the unique normalized words
/// in first-occurrence order. Per-frame failures skip the frame; if every
/// frame fails the result is empty (with a warning), not an error.
pub fn extract_ocr_words(
    video: &VideoAsset,
    frames: &[crate::media::Frame],
    source: &dyn FrameSource,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<OcrWords, SignalError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut words = Vec::new();
    let mut failures = 0usize;
    for frame in frames {
        let image_png = source.frame_png(frame.index)?;
        let response = gateway.call(
            backend_id,
            &WireRequest::Ocr {
                image_png,
                context: RequestContext::new(&video.video_id, Some(frame.index), "ocr"),
            },
        );
        let text = match response.and_then(|r| r.into_text()) {
            Ok(text) => text,
            Err(err) => {
                log::warn!(
                    "video {} frame {}: OCR failed: {err}",
                    video.video_id,
                    frame.index
                );
                failures += 1;
                continue;
            }
        };
        for token in text.split_whitespace() {
            let word = normalize_ocr_token(token);
            if !word.is_empty() && seen.insert(word.clone()) {
                words.push(word);
            }
        }
    }
    if failures == frames.len() && !frames.is_empty() {
        log::warn!(
            "video {}: OCR failed on all {failures} sampled frames; continuing without on-screen text",
            video.video_id
        );
    }
    Ok(OcrWords { words })
}

/// Loads the subtitle sidecar if one exists. Accepts the numbered-cue text
/// format and a JSON list of {start, dur, text}. A missing file is a
/// missing signal, not an error.
pub fn load_transcript(path: &Path) -> Result<Option<Transcript>, SignalError> {
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => {
            return Err(SignalError::MalformedSubtitle {
                path: path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })
        }
    };
    let transcript = if path.extension().is_some_and(|e| e == "json") {
        parse_json_transcript(&raw, path)?
    } else {
        parse_cue_transcript(&raw, path)?
    };
    Ok(Some(transcript))
}

#[derive(Deserialize)]
struct JsonCue {
    start: f64,
    dur: f64,
    text: String,
}

fn parse_json_transcript(raw: &str, path: &Path) -> Result<Transcript, SignalError> {
    let cues: Vec<JsonCue> = serde_json::from_str(raw).map_err(|e| SignalError::MalformedSubtitle {
        path: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let mut segments = Vec::with_capacity(cues.len());
    for (i, cue) in cues.into_iter().enumerate() {
        if cue.dur < 0.0 {
            return Err(SignalError::MalformedSubtitle {
                path: path.display().to_string(),
                line: i + 1,
                reason: format!("cue {} has negative duration {}", i + 1, cue.dur),
            });
        }
        segments.push(TranscriptSegment {
            start_s: cue.start,
            dur_s: cue.dur,
            text: cue.text,
        });
    }
    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(Transcript { segments })
}

/// Cue format: blank-line-separated blocks of
/// `sequence` / `HH:MM:SS,mmm --> HH:MM:SS,mmm` / text lines.
fn parse_cue_transcript(raw: &str, path: &Path) -> Result<Transcript, SignalError> {
    let err = |line: usize, reason: String| SignalError::MalformedSubtitle {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut segments = Vec::new();
    let mut lines = raw.lines().enumerate().peekable();
    while let Some((_, first)) = lines.next_if(|(_, l)| l.trim().is_empty()) {
        let _ = first;
    }
    while let Some((line_no, seq_line)) = lines.next() {
        if seq_line.trim().is_empty() {
            continue;
        }
        seq_line
            .trim()
            .parse::<u64>()
            .map_err(|_| err(line_no + 1, format!("expected cue sequence number, got {seq_line:?}")))?;
        let (time_no, time_line) = lines
            .next()
            .ok_or_else(|| err(line_no + 1, "cue missing timestamp line".to_string()))?;
        let (start_s, end_s) = parse_time_range(time_line)
            .ok_or_else(|| err(time_no + 1, format!("invalid timestamp range {time_line:?}")))?;
        if end_s < start_s {
            return Err(err(
                time_no + 1,
                format!("cue ends before it starts ({time_line:?})"),
            ));
        }
        let mut text_lines = Vec::new();
        while let Some((_, text)) = lines.next_if(|(_, l)| !l.trim().is_empty()) {
            text_lines.push(text.trim().to_string());
        }
        if text_lines.is_empty() {
            return Err(err(time_no + 2, "cue has no text lines".to_string()));
        }
        segments.push(TranscriptSegment {
            start_s,
            dur_s: end_s - start_s,
            text: text_lines.join(" "),
        });
    }
    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(Transcript { segments })
}

fn parse_time_range(line: &str) -> Option<(f64, f64)> {
    let (start, end) = line.split_once("-->")?;
    Some((parse_timestamp(start.trim())?, parse_timestamp(end.trim())?))
}

/// `HH:MM:SS,mmm` (comma or dot before milliseconds).
fn parse_timestamp(text: &str) -> Option<f64> {
    let mut parts = text.split(':');
    let hours: f64 = parts.next()?.parse().ok()?;
    let minutes: f64 = parts.next()?.parse().ok()?;
    let rest = parts.next()?;
    if parts.next().is_some() {
        return None;
    }
    let seconds: f64 = rest.replace(',', ".").parse().ok()?;
    if !(0.0..60.0).contains(&minutes) || !(0.0..60.0).contains(&seconds) {
        return None;
    }
    Some(hours * 3600.0 + minutes * 60.0 + seconds)
}

/// Queries the knowledge base by channel name. Skipped entirely for
/// non-advertisement videos; backend failures degrade to no metadata.
pub fn fetch_brand_metadata(
    video: &VideoAsset,
    gateway: &Gateway,
    backend_id: &str,
) -> BrandMetadata {
    if !video.is_advertisement {
        return BrandMetadata::none();
    }
    let Some(channel) = video.channel.as_deref().filter(|c| !c.is_empty()) else {
        return BrandMetadata::none();
    };
    let response = gateway.call(
        backend_id,
        &WireRequest::Knowledge {
            channel: channel.to_string(),
            context: RequestContext::new(&video.video_id, None, "brand"),
        },
    );
    match response.and_then(|r| r.into_knowledge()) {
        Ok(fields) => {
            if fields.company.is_none()
                && fields.product_line.is_none()
                && fields.description.is_none()
            {
                BrandMetadata::none()
            } else {
                BrandMetadata {
                    company: fields.company,
                    product_line: fields.product_line,
                    description: fields.description,
                    source: MetadataSource::KnowledgeBase,
                }
            }
        }
        Err(err) => {
            log::warn!(
                "video {}: brand metadata lookup failed ({err}); continuing without it",
                video.video_id
            );
            BrandMetadata::none()
        }
    }
}
