//! Dataset ingestion for the three benchmarks, persuasion annotation
//! aggregation, and corpus statistics.
//!
//! A dataset root holds `videos.jsonl` (one video record per line),
//! `labels.jsonl` (one gold record per line, schema per dataset), and an
//! optional per-video sidecar directory with `frames/` and a subtitle
//! file. Missing media is tolerated; missing labels are not.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::VideoAsset;
use crate::tasks::TaskCatalog;

const QUESTIONS_JSON: &str = include_str!("../data/persuasion_questions.json");

pub const QUESTION_COUNT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    VideoStory,
    VideoAds,
    Persuasion,
}

impl DatasetName {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "video_story" => Some(DatasetName::VideoStory),
            "video_ads" => Some(DatasetName::VideoAds),
            "persuasion" => Some(DatasetName::Persuasion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetName::VideoStory => "video_story",
            DatasetName::VideoAds => "video_ads",
            DatasetName::Persuasion => "persuasion",
        }
    }
}

/// Gold data of one advertisement: its topic, the annotator-provided
/// emotion tags, and the five action/reason statement pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdsLabels {
    pub topic: String,
    pub emotions: Vec<String>,
    pub actions: Vec<String>,
    pub reasons: Vec<String>,
}

/// Aggregated persuasion annotation of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyLabelSet {
    pub video_id: String,
    pub strategies: BTreeSet<String>,
    pub agreement: f64,
    pub n_annotators: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetLabels {
    Stories(BTreeMap<String, String>),
    Ads(BTreeMap<String, AdsLabels>),
    Strategies(BTreeMap<String, StrategyLabelSet>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: DatasetName,
    pub items: Vec<VideoAsset>,
    pub labels: DatasetLabels,
}

impl DatasetManifest {
    pub fn video_ids(&self) -> Vec<&str> {
        self.items.iter().map(|v| v.video_id.as_str()).collect()
    }

    pub fn asset(&self, video_id: &str) -> Option<&VideoAsset> {
        self.items.iter().find(|v| v.video_id == video_id)
    }
}

/// One annotator's 15 yes/no answers for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSheet {
    pub annotator_id: String,
    pub video_id: String,
    pub answers: [bool; QUESTION_COUNT],
}

/// The canonical 15-question list with each question's strategy set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionStrategyMap {
    entries: Vec<(String, BTreeSet<String>)>,
}

#[derive(Deserialize)]
struct QuestionEntry {
    question: String,
    strategies: Vec<String>,
}

impl QuestionStrategyMap {
    pub fn builtin() -> Self {
        Self::from_json(QUESTIONS_JSON, &TaskCatalog::builtin().strategies)
            .expect("built-in question map is well-formed")
    }

    pub fn from_json(json: &str, vocabulary: &[String]) -> Result<Self, CorpusError> {
        let entries: Vec<QuestionEntry> =
            serde_json::from_str(json).map_err(|e| CorpusError::DataFile {
                name: "question map".to_string(),
                reason: e.to_string(),
            })?;
        if entries.len() != QUESTION_COUNT {
            return Err(CorpusError::DataFile {
                name: "question map".to_string(),
                reason: format!("{} questions, expected {QUESTION_COUNT}", entries.len()),
            });
        }
        let mut out = Vec::with_capacity(entries.len());
        for entry in entries {
            let mut strategies = BTreeSet::new();
            for strategy in entry.strategies {
                if !vocabulary.contains(&strategy) {
                    return Err(CorpusError::DataFile {
                        name: "question map".to_string(),
                        reason: format!(
                            "question {:?} maps to unknown strategy {strategy:?}",
                            entry.question
                        ),
                    });
                }
                strategies.insert(strategy);
            }
            out.push((entry.question, strategies));
        }
        Ok(Self { entries: out })
    }

    pub fn load(path: &Path, vocabulary: &[String]) -> Result<Self, CorpusError> {
        let json = std::fs::read_to_string(path).map_err(|e| CorpusError::DataFile {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&json, vocabulary)
    }

    pub fn question(&self, index: usize) -> &str {
        &self.entries[index].0
    }

    pub fn strategies_for(&self, index: usize) -> &BTreeSet<String> {
        &self.entries[index].1
    }
}

/// How many yes answers affirm a question for a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffirmationRule {
    /// Strictly more than half the annotators answered yes.
    #[default]
    StrictMajority,
    AnyYes,
    Unanimous,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{path} line {line}: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("video {video_id:?} has a label record but is not in videos.jsonl")]
    UnknownVideo { video_id: String },

    #[error("video {video_id:?} has no label record")]
    MissingLabel { video_id: String },

    #[error("video {video_id:?}: topic {label:?} is not in the topic vocabulary")]
    UnknownTopic { video_id: String, label: String },

    #[error("video {video_id:?}: strategy {label:?} is not in the strategy vocabulary")]
    UnknownStrategy { video_id: String, label: String },

    #[error("video {video_id:?} has {got} {kind} statements, expected 5")]
    WrongStatementCount {
        video_id: String,
        kind: &'static str,
        got: usize,
    },

    #[error("video {video_id:?}: {reason}")]
    BadLabel { video_id: String, reason: String },

    #[error("video {video_id:?} has {have} annotation sheet(s), need at least 2")]
    TooFewAnnotators { video_id: String, have: usize },

    #[error("annotator {annotator_id:?} answered video {video_id:?} more than once")]
    DuplicateAnnotator {
        video_id: String,
        annotator_id: String,
    },

    #[error("data file {name}: {reason}")]
    DataFile { name: String, reason: String },

    #[error(transparent)]
    Asset(#[from] crate::model::ModelError),
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_line<T: serde::de::DeserializeOwned>(
    path: &Path,
    line_no: usize,
    line: &str,
) -> Result<T, CorpusError> {
    serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
        path: path.display().to_string(),
        line: line_no,
        reason: e.to_string(),
    })
}

/// Loads and validates one dataset from its root directory.
pub fn load_dataset(
    name: DatasetName,
    root: &Path,
    catalog: &TaskCatalog,
) -> Result<DatasetManifest, CorpusError> {
    let videos_path = root.join("videos.jsonl");
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (line_no, line) in read_lines(&videos_path)? {
        let asset: VideoAsset = parse_line(&videos_path, line_no, &line)?;
        asset.validate()?;
        if !ids.insert(asset.video_id.clone()) {
            return Err(CorpusError::MalformedRecord {
                path: videos_path.display().to_string(),
                line: line_no,
                reason: format!("duplicate video_id {:?}", asset.video_id),
            });
        }
        items.push(asset);
    }

    let labels_path = root.join("labels.jsonl");
    let labels = match name {
        DatasetName::VideoStory => {
            #[derive(Deserialize)]
            struct Row {
                video_id: String,
                story: String,
            }
            let mut stories = BTreeMap::new();
            for (line_no, line) in read_lines(&labels_path)? {
                let row: Row = parse_line(&labels_path, line_no, &line)?;
                check_known(&ids, &row.video_id)?;
                if row.story.trim().is_empty() {
                    return Err(CorpusError::BadLabel {
                        video_id: row.video_id,
                        reason: "gold story is empty".to_string(),
                    });
                }
                stories.insert(row.video_id, row.story);
            }
            require_all(&ids, stories.keys())?;
            DatasetLabels::Stories(stories)
        }
        DatasetName::VideoAds => {
            #[derive(Deserialize)]
            struct Row {
                video_id: String,
                #[serde(flatten)]
                labels: AdsLabels,
            }
            let mut ads = BTreeMap::new();
            for (line_no, line) in read_lines(&labels_path)? {
                let row: Row = parse_line(&labels_path, line_no, &line)?;
                check_known(&ids, &row.video_id)?;
                validate_ads_labels(&row.video_id, &row.labels, catalog)?;
                ads.insert(row.video_id, row.labels);
            }
            require_all(&ids, ads.keys())?;
            DatasetLabels::Ads(ads)
        }
        DatasetName::Persuasion => {
            let mut strategies = BTreeMap::new();
            for (line_no, line) in read_lines(&labels_path)? {
                let row: StrategyLabelSet = parse_line(&labels_path, line_no, &line)?;
                check_known(&ids, &row.video_id)?;
                validate_strategy_set(&row, catalog)?;
                strategies.insert(row.video_id.clone(), row);
            }
            require_all(&ids, strategies.keys())?;
            DatasetLabels::Strategies(strategies)
        }
    };

    Ok(DatasetManifest {
        name,
        items,
        labels,
    })
}

fn check_known(ids: &BTreeSet<String>, video_id: &str) -> Result<(), CorpusError> {
    if ids.contains(video_id) {
        Ok(())
    } else {
        Err(CorpusError::UnknownVideo {
            video_id: video_id.to_string(),
        })
    }
}

fn require_all<'a>(
    ids: &BTreeSet<String>,
    labeled: impl Iterator<Item = &'a String>,
) -> Result<(), CorpusError> {
    let labeled: BTreeSet<&String> = labeled.collect();
    for id in ids {
        if !labeled.contains(id) {
            return Err(CorpusError::MissingLabel {
                video_id: id.clone(),
            });
        }
    }
    Ok(())
}

fn validate_ads_labels(
    video_id: &str,
    labels: &AdsLabels,
    catalog: &TaskCatalog,
) -> Result<(), CorpusError> {
    if !catalog.topics.contains(&labels.topic) {
        return Err(CorpusError::UnknownTopic {
            video_id: video_id.to_string(),
            label: labels.topic.clone(),
        });
    }
    for (kind, statements) in [("action", &labels.actions), ("reason", &labels.reasons)] {
        if statements.len() != 5 {
            return Err(CorpusError::WrongStatementCount {
                video_id: video_id.to_string(),
                kind,
                got: statements.len(),
            });
        }
    }
    if labels.emotions.is_empty() {
        return Err(CorpusError::BadLabel {
            video_id: video_id.to_string(),
            reason: "no emotion labels".to_string(),
        });
    }
    // The emotion vocabulary is annotator-provided and open-ended; labels
    // outside the catalog are tolerated and clubbed to unclear later.
    for emotion in &labels.emotions {
        if !catalog.emotions.contains(emotion) {
            log::warn!("video {video_id}: emotion label {emotion:?} is outside the catalog");
        }
    }
    Ok(())
}

fn validate_strategy_set(
    row: &StrategyLabelSet,
    catalog: &TaskCatalog,
) -> Result<(), CorpusError> {
    if row.strategies.is_empty() {
        return Err(CorpusError::BadLabel {
            video_id: row.video_id.clone(),
            reason: "empty strategy set".to_string(),
        });
    }
    for strategy in &row.strategies {
        if !catalog.strategies.contains(strategy) {
            return Err(CorpusError::UnknownStrategy {
                video_id: row.video_id.clone(),
                label: strategy.clone(),
            });
        }
    }
    if !(0.0..=1.0).contains(&row.agreement) {
        return Err(CorpusError::BadLabel {
            video_id: row.video_id.clone(),
            reason: format!("agreement {} outside [0,1]", row.agreement),
        });
    }
    if row.n_annotators < 2 {
        return Err(CorpusError::BadLabel {
            video_id: row.video_id.clone(),
            reason: format!("{} annotator(s), need at least 2", row.n_annotators),
        });
    }
    Ok(())
}

/// The sidecar directory of one video.
pub fn video_dir(root: &Path, video_id: &str) -> PathBuf {
    root.join(video_id)
}

pub fn frames_dir(root: &Path, video_id: &str) -> PathBuf {
    video_dir(root, video_id).join("frames")
}

/// The subtitle sidecar, if one exists (cue text format preferred).
pub fn subtitle_path(root: &Path, video_id: &str) -> Option<PathBuf> {
    for name in ["subtitles.srt", "subtitles.json"] {
        let path = video_dir(root, video_id).join(name);
        if path.exists() {
            return Some(path);
        }
    }
    None
}

/// Reads annotation sheets from delimited text with the header
/// `annotator_id,video_id,q1..q15` and yes/no answers.
pub fn load_annotation_sheets(path: &Path) -> Result<Vec<AnnotationSheet>, CorpusError> {
    let malformed = |line: usize, reason: String| CorpusError::MalformedRecord {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CorpusError::DataFile {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    let mut expected = vec!["annotator_id".to_string(), "video_id".to_string()];
    expected.extend((1..=QUESTION_COUNT).map(|i| format!("q{i}")));
    let got: Vec<&str> = headers.iter().collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(malformed(1, format!("header {got:?}, expected {expected:?}")));
    }

    let mut sheets = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        let annotator_id = record[0].to_string();
        let video_id = record[1].to_string();
        if annotator_id.is_empty() || video_id.is_empty() {
            return Err(malformed(line, "empty annotator_id or video_id".to_string()));
        }
        if !seen.insert((annotator_id.clone(), video_id.clone())) {
            return Err(CorpusError::DuplicateAnnotator {
                video_id,
                annotator_id,
            });
        }
        let mut answers = [false; QUESTION_COUNT];
        for (q, answer) in answers.iter_mut().enumerate() {
            *answer = match record[q + 2].to_lowercase().as_str() {
                "yes" => true,
                "no" => false,
                other => {
                    return Err(malformed(
                        line,
                        format!("q{} answer {other:?}, expected yes or no", q + 1),
                    ))
                }
            };
        }
        sheets.push(AnnotationSheet {
            annotator_id,
            video_id,
            answers,
        });
    }
    Ok(sheets)
}

/// Aggregates annotation sheets into per-video strategy label sets.
///
/// Agreement is the mean over the 15 questions of the fraction of
/// annotator pairs giving identical answers. A question is affirmed under
/// the chosen rule (default: strictly more than half said yes); the label
/// set is the union of the affirmed questions' strategies, or {Unclear}
/// when nothing was affirmed. Videos under the agreement threshold are
/// dropped and reported separately.
pub fn aggregate_annotations(
    sheets: &[AnnotationSheet],
    qmap: &QuestionStrategyMap,
    min_agreement: f64,
    rule: AffirmationRule,
) -> Result<(Vec<StrategyLabelSet>, Vec<String>), CorpusError> {
    let mut by_video: BTreeMap<&str, Vec<&AnnotationSheet>> = BTreeMap::new();
    for sheet in sheets {
        by_video.entry(&sheet.video_id).or_default().push(sheet);
    }

    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for (video_id, sheets) in by_video {
        let n = sheets.len();
        if n < 2 {
            return Err(CorpusError::TooFewAnnotators {
                video_id: video_id.to_string(),
                have: n,
            });
        }
        let mut annotators = BTreeSet::new();
        for sheet in &sheets {
            if !annotators.insert(&sheet.annotator_id) {
                return Err(CorpusError::DuplicateAnnotator {
                    video_id: video_id.to_string(),
                    annotator_id: sheet.annotator_id.clone(),
                });
            }
        }

        let choose2 = |k: usize| (k * k.saturating_sub(1) / 2) as f64;
        let pairs = choose2(n);
        let mut agreement_sum = 0.0;
        let mut strategies = BTreeSet::new();
        for q in 0..QUESTION_COUNT {
            let yes = sheets.iter().filter(|s| s.answers[q]).count();
            let agreeing_pairs = choose2(yes) + choose2(n - yes);
            agreement_sum += agreeing_pairs / pairs;

            let affirmed = match rule {
                AffirmationRule::StrictMajority => 2 * yes > n,
                AffirmationRule::AnyYes => yes > 0,
                AffirmationRule::Unanimous => yes == n,
            };
            if affirmed {
                strategies.extend(qmap.strategies_for(q).iter().cloned());
            }
        }
        let agreement = agreement_sum / QUESTION_COUNT as f64;
        if strategies.is_empty() {
            strategies.insert("Unclear".to_string());
        }

        if agreement >= min_agreement {
            retained.push(StrategyLabelSet {
                video_id: video_id.to_string(),
                strategies,
                agreement,
                n_annotators: n,
            });
        } else {
            dropped.push(video_id.to_string());
        }
    }
    Ok((retained, dropped))
}

/// Writes aggregated strategy label sets as line-delimited records.
pub fn write_strategy_labels(
    path: &Path,
    labels: &[StrategyLabelSet],
) -> Result<(), CorpusError> {
    let mut out = String::new();
    for label in labels {
        let line = serde_json::to_string(label).map_err(|e| CorpusError::DataFile {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_items: usize,
    pub mean_duration_s: f64,
    /// Mean whitespace-token count of gold stories; absent for datasets
    /// without them.
    pub mean_story_words: Option<f64>,
    /// Topic counts for ads, strategy counts for persuasion.
    pub label_histogram: BTreeMap<String, usize>,
}

pub fn corpus_stats(manifest: &DatasetManifest) -> CorpusStats {
    let n = manifest.items.len();
    let mean_duration_s = if n == 0 {
        0.0
    } else {
        manifest.items.iter().map(|v| v.duration_s).sum::<f64>() / n as f64
    };
    let mut label_histogram = BTreeMap::new();
    let mut mean_story_words = None;
    match &manifest.labels {
        DatasetLabels::Stories(stories) => {
            if !stories.is_empty() {
                let total: usize = stories
                    .values()
                    .map(|s| s.split_whitespace().count())
                    .sum();
                mean_story_words = Some(total as f64 / stories.len() as f64);
            }
        }
        DatasetLabels::Ads(ads) => {
            for labels in ads.values() {
                *label_histogram.entry(labels.topic.clone()).or_insert(0) += 1;
            }
        }
        DatasetLabels::Strategies(strategies) => {
            for set in strategies.values() {
                for strategy in &set.strategies {
                    *label_histogram.entry(strategy.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    CorpusStats {
        n_items: n,
        mean_duration_s,
        mean_story_words,
        label_histogram,
    }
}
