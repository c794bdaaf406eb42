//! Stage orchestration: drives a corpus through keyframe selection, signal
//! extraction, story generation, and the downstream tasks.
//!
//! Each verb processes videos on a fixed-size worker pool, but all file
//! writes and manifest updates happen on the calling thread in corpus
//! order, so the output tree is byte-identical for any worker count. A
//! failed stage marks that video in the run manifest and the corpus run
//! continues; callers distinguish clean, partial, and total failure via
//! [`RunOutcome`].
//!
//! With a cache store attached, finished stage outputs are kept under
//! content-addressed keys (stage, video, relevant config fields) and reused
//! on re-runs. Cache problems degrade to recomputation, never to failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, DatasetLabels, DatasetManifest, DatasetName};
use crate::gateway::Gateway;
use crate::media::{
    sample_ocr_frames, select_keyframes, DirFrameSource, FlowScore, FrameSource, KeyframeSet,
    SamplingMethod,
};
use crate::model::{
    cache_key, sha256_hex, PipelineConfig, RunManifest, Stage, StageStatus, VideoAsset,
};
use crate::prompt::{assemble_story_prompt, PromptTemplates};
use crate::signals::{
    caption_frames, extract_ocr_words, fetch_brand_metadata, load_transcript, BrandMetadata,
    OcrWords, Transcript, VerbalBundle,
};
use crate::store::ArtifactStore;
use crate::tasks::{
    build_retrieval_options, classify, generate_statement, generate_story, retrieval_seed,
    write_predictions, GeneratedStory, Prediction, TaskCatalog, TaskId, TaskKind,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),

    #[error(transparent)]
    Task(#[from] crate::tasks::TaskError),

    #[error(transparent)]
    Model(#[from] crate::model::ModelError),

    #[error("dataset {0} has no downstream tasks")]
    NoTasks(String),

    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("task {task} does not apply to dataset {dataset}")]
    TaskDatasetMismatch { task: String, dataset: String },
}

/// Result of one verb over one corpus: the manifest plus how many videos
/// finished every stage and how many failed at least one.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub ok: usize,
    pub failed: usize,
}

impl RunOutcome {
    pub fn all_failed(&self) -> bool {
        self.failed > 0 && self.ok == 0
    }

    pub fn partial(&self) -> bool {
        self.failed > 0 && self.ok > 0
    }
}

/// Everything a verb needs: validated config knobs, the backend gateway,
/// the output root, worker count, and an optional cache store.
pub struct Runner<'a> {
    pub cfg: &'a PipelineConfig,
    /// stage name -> backend id, for the stages the verbs call.
    pub bindings: BTreeMap<String, String>,
    pub gateway: &'a Gateway,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub cache: Option<&'a ArtifactStore>,
    /// RFC 3339; derive from `SOURCE_DATE_EPOCH` for reproducible trees.
    pub created_at: String,
    pub templates: PromptTemplates,
}

/// Selected frames in cacheable form: indices into the frame stream rather
/// than decoded pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KeyframeRecord {
    method: SamplingMethod,
    indices: Vec<usize>,
    scores: Option<Vec<FlowScore>>,
}

impl KeyframeRecord {
    fn from_set(set: &KeyframeSet) -> Self {
        Self {
            method: set.method,
            indices: set.frames.iter().map(|f| f.index).collect(),
            scores: set.scores.clone(),
        }
    }

    fn resolve(&self, source: &dyn FrameSource) -> Result<KeyframeSet, crate::media::MediaError> {
        let frames = self
            .indices
            .iter()
            .map(|&i| source.frame(i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(KeyframeSet {
            method: self.method,
            frames,
            scores: self.scores.clone(),
        })
    }
}

/// What one worker hands back: statuses to fold into the manifest plus the
/// artifacts to write, all serialized on the main thread.
struct VideoResult<P> {
    video_id: String,
    stages: Vec<(Stage, StageStatus)>,
    payload: Option<P>,
}

impl<P> VideoResult<P> {
    fn failed(&self) -> bool {
        self.stages
            .iter()
            .any(|(_, s)| matches!(s, StageStatus::Failed(_)))
    }
}

/// Runs `worker` over `items` on `jobs` threads, returning outputs in item
/// order regardless of scheduling.
fn run_pool<I: Sync, T: Send>(
    jobs: usize,
    items: &[I],
    worker: impl Fn(&I) -> T + Sync,
) -> Vec<T> {
    let jobs = jobs.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = Vec::new();
    slots.resize_with(items.len(), || None);
    let slots = Mutex::new(slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = worker(&items[i]);
                slots.lock().expect("worker slot lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker slot lock")
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect()
}

/// Loads a cached stage value, treating damage or IO trouble as a miss so
/// the cache can never fail a run.
fn cache_get<T: serde::de::DeserializeOwned>(
    cache: Option<&ArtifactStore>,
    key: &str,
) -> Option<T> {
    match cache?.load(key) {
        Ok(hit) => hit,
        Err(e) => {
            log::warn!("cache read for {key} failed, recomputing: {e}");
            None
        }
    }
}

fn cache_put<T: Serialize>(cache: Option<&ArtifactStore>, key: &str, value: &T) {
    if let Some(store) = cache {
        if let Err(e) = store.store(key, value) {
            log::warn!("cache write for {key} failed, continuing uncached: {e}");
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    let io_err = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    std::fs::write(path, text).map_err(io_err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let body = serde_json::to_string_pretty(value).expect("serializable artifact");
    write_text(path, &format!("{body}\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let io_err = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    let raw = std::fs::read_to_string(path).map_err(io_err)?;
    serde_json::from_str(&raw).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
    })
}

/// Deterministic run id: a digest of the verb, the pipeline knobs, and the
/// corpus ids, so identical runs produce identical manifests.
fn run_id(verb: &str, cfg: &PipelineConfig, video_ids: &[&str]) -> String {
    let cfg_json = serde_json::to_string(cfg).expect("config serializes");
    let seed = format!("run/{verb}/{cfg_json}/{}", video_ids.join(","));
    sha256_hex(seed.as_bytes())[..12].to_string()
}

impl Runner<'_> {
    fn manifest_for(&self, verb: &str, dataset: &DatasetManifest, stages: &[Stage]) -> RunManifest {
        let bindings: BTreeMap<String, String> = stages
            .iter()
            .filter(|s| s.needs_backend())
            .filter_map(|s| {
                self.bindings
                    .get(s.name())
                    .map(|b| (s.name().to_string(), b.clone()))
            })
            .collect();
        let mut manifest = RunManifest::new(
            run_id(verb, self.cfg, &dataset.video_ids()),
            self.cfg.clone(),
            bindings,
            self.created_at.clone(),
        );
        for video in &dataset.items {
            manifest.register_video(&video.video_id, stages);
        }
        manifest
    }

    fn backend_for(&self, stage: Stage) -> Result<&str, PipelineError> {
        let id = self.bindings.get(stage.name()).ok_or_else(|| {
            PipelineError::Config(crate::config::ConfigError::UnboundStage(
                stage.name().to_string(),
            ))
        })?;
        if !self.gateway.has_backend(id) {
            return Err(PipelineError::Config(
                crate::config::ConfigError::Invalid {
                    issues: vec![format!(
                        "stages.{}: backend {id:?} is not registered",
                        stage.name()
                    )],
                },
            ));
        }
        Ok(id)
    }

    fn finalize<P>(
        &self,
        verb: &str,
        dataset: &DatasetManifest,
        stages: &[Stage],
        results: Vec<VideoResult<P>>,
        mut write: impl FnMut(&VideoResult<P>) -> Result<(), PipelineError>,
    ) -> Result<RunOutcome, PipelineError> {
        let mut manifest = self.manifest_for(verb, dataset, stages);
        let mut ok = 0;
        let mut failed = 0;
        for result in &results {
            for (stage, status) in &result.stages {
                manifest.set_status(&result.video_id, *stage, status.clone())?;
            }
            if result.failed() {
                failed += 1;
            } else {
                ok += 1;
            }
            // a failed video may still carry partial output worth keeping
            // (e.g. the task predictions that did succeed)
            if result.payload.is_some() {
                write(result)?;
            }
        }
        write_json(&self.out_dir.join(format!("manifest-{verb}.json")), &manifest)?;
        Ok(RunOutcome {
            manifest,
            ok,
            failed,
        })
    }

    /// Keyframes, captions, OCR, brand metadata, and transcript for every
    /// corpus video; one `VerbalBundle` JSON per video under
    /// `out/bundles/`. Long videos skip OCR and metadata: the long-video
    /// prompt never uses them.
    pub fn verbalize(
        &self,
        dataset: &DatasetManifest,
        dataset_root: &Path,
    ) -> Result<RunOutcome, PipelineError> {
        const STAGES: [Stage; 5] = [
            Stage::Keyframes,
            Stage::Captions,
            Stage::Ocr,
            Stage::Metadata,
            Stage::Transcript,
        ];
        let caption_backend = self.backend_for(Stage::Captions)?;
        let ocr_backend = self.backend_for(Stage::Ocr)?;
        let metadata_backend = self.backend_for(Stage::Metadata)?;

        let results = run_pool(self.jobs, &dataset.items, |video| {
            self.verbalize_video(
                video,
                dataset_root,
                caption_backend,
                ocr_backend,
                metadata_backend,
            )
        });

        self.finalize("verbalize", dataset, &STAGES, results, |result| {
            let bundle = result.payload.as_ref().expect("written results carry a bundle");
            write_json(
                &self
                    .out_dir
                    .join("bundles")
                    .join(format!("{}.json", result.video_id)),
                bundle,
            )
        })
    }

    fn verbalize_video(
        &self,
        video: &VideoAsset,
        root: &Path,
        caption_backend: &str,
        ocr_backend: &str,
        metadata_backend: &str,
    ) -> VideoResult<VerbalBundle> {
        let vid = video.video_id.clone();
        let mut stages = Vec::new();
        let fail = |stages: Vec<(Stage, StageStatus)>| VideoResult {
            video_id: vid.clone(),
            stages,
            payload: None,
        };

        let frames_dir = corpus::frames_dir(root, &vid);
        let source = match DirFrameSource::open(&frames_dir, video.fps) {
            Ok(s) => s,
            Err(e) => {
                stages.push((Stage::Keyframes, StageStatus::Failed(e.to_string())));
                return fail(stages);
            }
        };

        // keyframes
        let kf_key = cache_key("keyframes", &vid, &self.cfg.stage_slice(Stage::Keyframes));
        let (record, kf_status) = match cache_get::<KeyframeRecord>(self.cache, &kf_key) {
            Some(record) => (record, StageStatus::Cached),
            None => match select_keyframes(video, &source, self.cfg) {
                Ok(set) => {
                    let record = KeyframeRecord::from_set(&set);
                    cache_put(self.cache, &kf_key, &record);
                    (record, StageStatus::Done)
                }
                Err(e) => {
                    stages.push((Stage::Keyframes, StageStatus::Failed(e.to_string())));
                    return fail(stages);
                }
            },
        };
        let keyframes = match record.resolve(&source) {
            Ok(set) => set,
            Err(e) => {
                stages.push((Stage::Keyframes, StageStatus::Failed(e.to_string())));
                return fail(stages);
            }
        };
        stages.push((Stage::Keyframes, kf_status));

        // captions
        let cap_key = cache_key("captions", &vid, &self.cfg.stage_slice(Stage::Captions));
        let captions = match cache_get::<Vec<crate::signals::FrameCaption>>(self.cache, &cap_key) {
            Some(captions) => {
                stages.push((Stage::Captions, StageStatus::Cached));
                captions
            }
            None => {
                match caption_frames(video, &keyframes, &source, self.gateway, caption_backend) {
                    Ok(captions) => {
                        cache_put(self.cache, &cap_key, &captions);
                        stages.push((Stage::Captions, StageStatus::Done));
                        captions
                    }
                    Err(e) => {
                        stages.push((Stage::Captions, StageStatus::Failed(e.to_string())));
                        return fail(stages);
                    }
                }
            }
        };

        // OCR and brand metadata feed only the short-video prompt
        let is_short = video.duration_s < self.cfg.short_video_max_s;
        let ocr = if !is_short {
            stages.push((Stage::Ocr, StageStatus::Done));
            OcrWords::default()
        } else {
            let ocr_key = cache_key("ocr", &vid, &self.cfg.stage_slice(Stage::Ocr));
            match cache_get::<OcrWords>(self.cache, &ocr_key) {
                Some(words) => {
                    stages.push((Stage::Ocr, StageStatus::Cached));
                    words
                }
                None => {
                    let sampled = match source.all_frames() {
                        Ok(all) => sample_ocr_frames(&all, self.cfg),
                        Err(e) => {
                            stages.push((Stage::Ocr, StageStatus::Failed(e.to_string())));
                            return fail(stages);
                        }
                    };
                    match extract_ocr_words(video, &sampled, &source, self.gateway, ocr_backend) {
                        Ok(words) => {
                            cache_put(self.cache, &ocr_key, &words);
                            stages.push((Stage::Ocr, StageStatus::Done));
                            words
                        }
                        Err(e) => {
                            stages.push((Stage::Ocr, StageStatus::Failed(e.to_string())));
                            return fail(stages);
                        }
                    }
                }
            }
        };

        // metadata degrades to none on backend trouble, so a cached value
        // could freeze an outage; always fetch live
        let metadata = if is_short {
            fetch_brand_metadata(video, self.gateway, metadata_backend)
        } else {
            BrandMetadata::none()
        };
        stages.push((Stage::Metadata, StageStatus::Done));

        let transcript: Option<Transcript> = match corpus::subtitle_path(root, &vid) {
            Some(path) => match load_transcript(&path) {
                Ok(t) => t,
                Err(e) => {
                    stages.push((Stage::Transcript, StageStatus::Failed(e.to_string())));
                    return fail(stages);
                }
            },
            None => None,
        };
        stages.push((Stage::Transcript, StageStatus::Done));

        VideoResult {
            video_id: vid,
            stages,
            payload: Some(VerbalBundle {
                video_id: video.video_id.clone(),
                title: video.title.clone(),
                metadata,
                captions,
                ocr,
                transcript,
            }),
        }
    }

    /// Story generation over the bundles a previous `verbalize` left under
    /// this output root. Writes the assembled prompt to `out/prompts/` and
    /// the story to `out/stories/` per video.
    pub fn stories(&self, dataset: &DatasetManifest) -> Result<RunOutcome, PipelineError> {
        const STAGES: [Stage; 1] = [Stage::Story];
        let backend = self.backend_for(Stage::Story)?;

        let results = run_pool(self.jobs, &dataset.items, |video| {
            self.story_video(video, backend)
        });

        self.finalize("story", dataset, &STAGES, results, |result| {
            let (rendered, story) = result.payload.as_ref().expect("written results carry a story");
            write_text(
                &self
                    .out_dir
                    .join("prompts")
                    .join(format!("{}.txt", result.video_id)),
                &format!("{rendered}\n"),
            )?;
            write_json(
                &self
                    .out_dir
                    .join("stories")
                    .join(format!("{}.json", result.video_id)),
                story,
            )
        })
    }

    fn story_video(&self, video: &VideoAsset, backend: &str) -> VideoResult<(String, GeneratedStory)> {
        let vid = video.video_id.clone();
        let fail = |reason: String| VideoResult {
            video_id: vid.clone(),
            stages: vec![(Stage::Story, StageStatus::Failed(reason))],
            payload: None,
        };

        let bundle_path = self.out_dir.join("bundles").join(format!("{vid}.json"));
        let bundle: VerbalBundle = match read_json(&bundle_path) {
            Ok(b) => b,
            Err(e) => return fail(format!("no usable bundle (run verbalize first?): {e}")),
        };
        let prompt = match assemble_story_prompt(&bundle, video, self.cfg, &self.templates) {
            Ok(p) => p,
            Err(e) => return fail(e.to_string()),
        };

        let story_key = cache_key("story", &vid, &self.cfg.stage_slice(Stage::Story));
        let (story, status) = match cache_get::<GeneratedStory>(self.cache, &story_key) {
            Some(story) => (story, StageStatus::Cached),
            None => {
                match generate_story(
                    &bundle,
                    video,
                    self.cfg,
                    &self.templates,
                    self.gateway,
                    backend,
                ) {
                    Ok(story) => {
                        cache_put(self.cache, &story_key, &story);
                        (story, StageStatus::Done)
                    }
                    Err(e) => return fail(e.to_string()),
                }
            }
        };
        VideoResult {
            video_id: vid,
            stages: vec![(Stage::Story, status)],
            payload: Some((prompt.rendered, story)),
        }
    }

    /// Downstream tasks over the stories a previous `story` run left under
    /// this output root. Produces one sorted `predictions.jsonl`.
    pub fn tasks(
        &self,
        dataset: &DatasetManifest,
        selected: &[TaskId],
        catalog: &TaskCatalog,
    ) -> Result<RunOutcome, PipelineError> {
        const STAGES: [Stage; 1] = [Stage::Tasks];
        let backend = self.backend_for(Stage::Tasks)?;
        for task in selected {
            if !applicable_tasks(dataset.name).contains(task) {
                return Err(PipelineError::TaskDatasetMismatch {
                    task: task.name().to_string(),
                    dataset: dataset.name.name().to_string(),
                });
            }
        }

        // retrieval distractors: every statement of every other video
        let pools = RetrievalPools::build(&dataset.labels);

        let results = run_pool(self.jobs, &dataset.items, |video| {
            self.task_video(video, dataset, selected, catalog, &pools, backend)
        });

        let mut predictions: Vec<Prediction> = Vec::new();
        let outcome = self.finalize("tasks", dataset, &STAGES, results, |result| {
            predictions.extend(result.payload.as_ref().expect("written results carry predictions").clone());
            Ok(())
        })?;
        write_predictions(&self.out_dir.join("predictions.jsonl"), &predictions)?;
        Ok(outcome)
    }

    fn task_video(
        &self,
        video: &VideoAsset,
        dataset: &DatasetManifest,
        selected: &[TaskId],
        catalog: &TaskCatalog,
        pools: &RetrievalPools,
        backend: &str,
    ) -> VideoResult<Vec<Prediction>> {
        let vid = video.video_id.clone();
        let story_path = self.out_dir.join("stories").join(format!("{vid}.json"));
        let story: GeneratedStory = match read_json(&story_path) {
            Ok(s) => s,
            Err(e) => {
                return VideoResult {
                    video_id: vid,
                    stages: vec![(Stage::Tasks, StageStatus::Failed(format!(
                        "no usable story (run story first?): {e}"
                    )))],
                    payload: None,
                }
            }
        };

        let mut predictions = Vec::new();
        let mut errors = Vec::new();
        let mut any_computed = false;
        for &task in selected {
            let task_key = {
                let mut slice = self.cfg.stage_slice(Stage::Tasks);
                slice.extend_from_slice(task.name().as_bytes());
                cache_key("tasks", &vid, &slice)
            };
            if let Some(hit) = cache_get::<Prediction>(self.cache, &task_key) {
                predictions.push(hit);
                continue;
            }
            match self.run_task(task, video, dataset, catalog, pools, &story, backend) {
                Ok(prediction) => {
                    cache_put(self.cache, &task_key, &prediction);
                    predictions.push(prediction);
                    any_computed = true;
                }
                Err(e) => errors.push(format!("task {}: {e}", task.name())),
            }
        }

        let status = if !errors.is_empty() {
            StageStatus::Failed(errors.join("; "))
        } else if any_computed {
            StageStatus::Done
        } else {
            StageStatus::Cached
        };
        VideoResult {
            video_id: vid,
            stages: vec![(Stage::Tasks, status)],
            // failed videos still surface the predictions that did succeed
            payload: Some(predictions),
        }
    }

    fn run_task(
        &self,
        task: TaskId,
        video: &VideoAsset,
        dataset: &DatasetManifest,
        catalog: &TaskCatalog,
        pools: &RetrievalPools,
        story: &GeneratedStory,
        backend: &str,
    ) -> Result<Prediction, crate::tasks::TaskError> {
        let vid = &video.video_id;
        match task.kind() {
            TaskKind::Classification => {
                let spec = catalog.spec(task)?;
                classify(&spec, story, self.cfg, self.gateway, backend)
            }
            TaskKind::Retrieval => {
                let (target, pool) = pools.instance(task, vid, &dataset.labels)?;
                let seed = retrieval_seed(self.cfg.rng_seed, vid, task);
                let options = build_retrieval_options(&target, &pool, seed)?;
                let spec = catalog.retrieval_spec(task, options)?;
                classify(&spec, story, self.cfg, self.gateway, backend)
            }
            TaskKind::Generation => {
                let spec = catalog.spec(task)?;
                let context = if task == TaskId::ReasonGivenAction {
                    Some(first_statement(&dataset.labels, vid, TaskId::ActionRetrieval)?)
                } else {
                    None
                };
                generate_statement(
                    &spec,
                    story,
                    context.as_deref(),
                    self.cfg,
                    self.gateway,
                    backend,
                )
            }
        }
    }
}

/// The downstream tasks each dataset's labels support.
pub fn applicable_tasks(dataset: DatasetName) -> &'static [TaskId] {
    match dataset {
        DatasetName::VideoAds => &[
            TaskId::Topic,
            TaskId::Emotion,
            TaskId::EmotionClubbed,
            TaskId::ActionRetrieval,
            TaskId::ReasonRetrieval,
            TaskId::ActionGen,
            TaskId::ReasonGen,
            TaskId::ReasonGivenAction,
        ],
        DatasetName::Persuasion => &[TaskId::Persuasion],
        DatasetName::VideoStory => &[],
    }
}

/// Flattened statement lists for distractor sampling, built once per run.
struct RetrievalPools {
    /// (video_id, statement) pairs, corpus order.
    actions: Vec<(String, String)>,
    reasons: Vec<(String, String)>,
}

impl RetrievalPools {
    fn build(labels: &DatasetLabels) -> Self {
        let mut actions = Vec::new();
        let mut reasons = Vec::new();
        if let DatasetLabels::Ads(ads) = labels {
            for (vid, l) in ads {
                for a in &l.actions {
                    actions.push((vid.clone(), a.clone()));
                }
                for r in &l.reasons {
                    reasons.push((vid.clone(), r.clone()));
                }
            }
        }
        Self { actions, reasons }
    }

    /// The target statement of this video plus every other video's
    /// statements as the candidate pool.
    fn instance(
        &self,
        task: TaskId,
        video_id: &str,
        labels: &DatasetLabels,
    ) -> Result<(String, Vec<String>), crate::tasks::TaskError> {
        let target = first_statement(labels, video_id, task)?;
        let all = match task {
            TaskId::ActionRetrieval => &self.actions,
            _ => &self.reasons,
        };
        let pool = all
            .iter()
            .filter(|(vid, _)| vid != video_id)
            .map(|(_, s)| s.clone())
            .collect();
        Ok((target, pool))
    }
}

/// A video's ground-truth statement for retrieval/context purposes: the
/// first of its annotated statements.
fn first_statement(
    labels: &DatasetLabels,
    video_id: &str,
    task: TaskId,
) -> Result<String, crate::tasks::TaskError> {
    let what = match task {
        TaskId::ActionRetrieval => "action statements",
        _ => "reason statements",
    };
    let missing = || crate::tasks::TaskError::MissingStatements {
        video_id: video_id.to_string(),
        what,
    };
    let DatasetLabels::Ads(ads) = labels else {
        return Err(missing());
    };
    let l = ads.get(video_id).ok_or_else(missing)?;
    let list = match task {
        TaskId::ActionRetrieval => &l.actions,
        _ => &l.reasons,
    };
    list.first().cloned().ok_or_else(missing)
}

/// Gold labels/references for one dataset, shaped for the accuracy and
/// generation metrics. Built from the same labels the tasks ran against.
pub mod eval {
    use std::collections::BTreeMap;
    use std::collections::BTreeSet;

    use serde::{Deserialize, Serialize};

    use super::*;
    use crate::metrics::{
        evaluate_generation, multilabel_hit_accuracy, tokenize, top1_accuracy, MetricReport,
        MetricsError,
    };

    #[derive(Debug, Error)]
    pub enum EvalError {
        #[error(transparent)]
        Metrics(#[from] MetricsError),

        #[error(transparent)]
        Task(#[from] crate::tasks::TaskError),

        #[error("no predictions for task {0}")]
        NoPredictions(String),

        #[error("video {video_id}: no gold labels")]
        MissingGold { video_id: String },

        #[error("video {video_id} task {task}: prediction carries no {want}")]
        WrongPayload {
            video_id: String,
            task: String,
            want: &'static str,
        },

        #[error("dataset {0} stores no gold stories")]
        NoGoldStories(String),
    }

    /// Accuracy per classification/retrieval task plus a generation metric
    /// report per free-text task.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TaskScores {
        pub accuracy: BTreeMap<String, f64>,
        pub generation: BTreeMap<String, MetricReport>,
        pub n_videos: usize,
    }

    /// Scores story texts against the dataset's gold stories.
    pub fn score_stories(
        dataset: &DatasetManifest,
        stories: &[(String, String)],
    ) -> Result<MetricReport, EvalError> {
        let DatasetLabels::Stories(gold) = &dataset.labels else {
            return Err(EvalError::NoGoldStories(dataset.name.name().to_string()));
        };
        let mut items = Vec::new();
        for (vid, hyp) in stories {
            let reference = gold.get(vid).ok_or_else(|| EvalError::MissingGold {
                video_id: vid.clone(),
            })?;
            items.push((vid.clone(), tokenize(hyp), vec![tokenize(reference)]));
        }
        Ok(evaluate_generation(&items)?)
    }

    /// Scores task predictions against the dataset's gold labels. Emotion
    /// gold is the annotator label set (a prediction inside it counts);
    /// clubbed emotion clubs both sides before comparing.
    pub fn score_tasks(
        dataset: &DatasetManifest,
        catalog: &TaskCatalog,
        predictions: &[Prediction],
    ) -> Result<TaskScores, EvalError> {
        let mut by_task: BTreeMap<TaskId, Vec<&Prediction>> = BTreeMap::new();
        for p in predictions {
            by_task.entry(p.task_id).or_default().push(p);
        }

        let mut accuracy = BTreeMap::new();
        let mut generation = BTreeMap::new();
        let mut videos: BTreeSet<&str> = BTreeSet::new();

        for (task, preds) in &by_task {
            let mut preds: Vec<&Prediction> = preds.clone();
            preds.sort_by(|a, b| a.video_id.cmp(&b.video_id));
            videos.extend(preds.iter().map(|p| p.video_id.as_str()));

            match task.kind() {
                TaskKind::Classification | TaskKind::Retrieval => {
                    let labeled = preds
                        .iter()
                        .map(|p| {
                            let label = p.label.clone().ok_or(EvalError::WrongPayload {
                                video_id: p.video_id.clone(),
                                task: task.name().to_string(),
                                want: "label",
                            })?;
                            Ok((p.video_id.clone(), label))
                        })
                        .collect::<Result<Vec<_>, EvalError>>()?;
                    let score = match task {
                        TaskId::Topic => {
                            let gold = gold_topic(dataset, &labeled)?;
                            top1_accuracy(&labeled, &gold)?
                        }
                        TaskId::Emotion => {
                            let gold = gold_emotions(dataset, &labeled, None)?;
                            multilabel_hit_accuracy(&labeled, &gold)?
                        }
                        TaskId::EmotionClubbed => {
                            let gold = gold_emotions(dataset, &labeled, Some(catalog))?;
                            multilabel_hit_accuracy(&labeled, &gold)?
                        }
                        TaskId::Persuasion => {
                            let gold = gold_strategies(dataset, &labeled)?;
                            multilabel_hit_accuracy(&labeled, &gold)?
                        }
                        TaskId::ActionRetrieval | TaskId::ReasonRetrieval => {
                            let gold = labeled
                                .iter()
                                .map(|(vid, _)| {
                                    Ok((
                                        vid.clone(),
                                        first_statement(&dataset.labels, vid, *task)?,
                                    ))
                                })
                                .collect::<Result<Vec<_>, EvalError>>()?;
                            top1_accuracy(&labeled, &gold)?
                        }
                        _ => unreachable!("generation handled below"),
                    };
                    accuracy.insert(task.name().to_string(), score);
                }
                TaskKind::Generation => {
                    let mut items = Vec::new();
                    for p in &preds {
                        let text = p.text.as_deref().ok_or(EvalError::WrongPayload {
                            video_id: p.video_id.clone(),
                            task: task.name().to_string(),
                            want: "text",
                        })?;
                        let refs = gold_statements(dataset, &p.video_id, *task)?;
                        items.push((
                            p.video_id.clone(),
                            tokenize(text),
                            refs.iter().map(|r| tokenize(r)).collect(),
                        ));
                    }
                    generation.insert(task.name().to_string(), evaluate_generation(&items)?);
                }
            }
        }

        Ok(TaskScores {
            accuracy,
            generation,
            n_videos: videos.len(),
        })
    }

    fn ads_of<'a>(
        dataset: &'a DatasetManifest,
        video_id: &str,
    ) -> Result<&'a corpus::AdsLabels, EvalError> {
        let DatasetLabels::Ads(ads) = &dataset.labels else {
            return Err(EvalError::MissingGold {
                video_id: video_id.to_string(),
            });
        };
        ads.get(video_id).ok_or_else(|| EvalError::MissingGold {
            video_id: video_id.to_string(),
        })
    }

    fn gold_topic(
        dataset: &DatasetManifest,
        preds: &[(String, String)],
    ) -> Result<Vec<(String, String)>, EvalError> {
        preds
            .iter()
            .map(|(vid, _)| Ok((vid.clone(), ads_of(dataset, vid)?.topic.clone())))
            .collect()
    }

    /// Gold emotion sets; with a catalog, both gold and (upstream) the
    /// prediction options are in clubbed space.
    fn gold_emotions(
        dataset: &DatasetManifest,
        preds: &[(String, String)],
        club_with: Option<&TaskCatalog>,
    ) -> Result<Vec<(String, BTreeSet<String>)>, EvalError> {
        preds
            .iter()
            .map(|(vid, _)| {
                let raw = &ads_of(dataset, vid)?.emotions;
                let set: BTreeSet<String> = match club_with {
                    Some(catalog) => raw
                        .iter()
                        .map(|e| catalog.taxonomy.club_or_unclear(e).to_string())
                        .collect(),
                    None => raw.iter().map(|e| e.to_lowercase()).collect(),
                };
                Ok((vid.clone(), set))
            })
            .collect()
    }

    fn gold_strategies(
        dataset: &DatasetManifest,
        preds: &[(String, String)],
    ) -> Result<Vec<(String, BTreeSet<String>)>, EvalError> {
        let DatasetLabels::Strategies(sets) = &dataset.labels else {
            return Err(EvalError::MissingGold {
                video_id: preds
                    .first()
                    .map(|(v, _)| v.clone())
                    .unwrap_or_default(),
            });
        };
        preds
            .iter()
            .map(|(vid, _)| {
                let gold = sets.get(vid).ok_or_else(|| EvalError::MissingGold {
                    video_id: vid.clone(),
                })?;
                Ok((vid.clone(), gold.strategies.clone()))
            })
            .collect()
    }

    /// All five gold statements as references for a generation task.
    fn gold_statements(
        dataset: &DatasetManifest,
        video_id: &str,
        task: TaskId,
    ) -> Result<Vec<String>, EvalError> {
        let l = ads_of(dataset, video_id)?;
        Ok(match task {
            TaskId::ActionGen => l.actions.clone(),
            _ => l.reasons.clone(),
        })
    }
}
