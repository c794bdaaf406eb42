//! Operator entry point: runs pipeline stages, manages caches and backends,
//! and emits evaluation reports.
//!
//! Every config leaf is overridable with a flag of the same dotted name
//! (`--pipeline.flow_threshold 60`, `--stages.story live`); those are
//! collected before normal flag parsing and applied to the loaded config in
//! order. Logs go to standard error only; data goes to files under `--out`
//! or to standard output.
//!
//! Exit codes: 0 success, 1 usage error, 2 config or input error,
//! 3 backend error (or every video failed), 4 partial failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use clap::{Parser, Subcommand, ValueEnum};

use storyverb_core::config::{Config, ConfigError};
use storyverb_core::corpus::{
    self, load_annotation_sheets, load_dataset, write_strategy_labels, AffirmationRule,
    DatasetManifest, DatasetName, QuestionStrategyMap,
};
use storyverb_core::gateway::SystemClock;
use storyverb_core::model::Stage;
use storyverb_core::pipeline::{applicable_tasks, eval, PipelineError, RunOutcome, Runner};
use storyverb_core::prompt::PromptTemplates;
use storyverb_core::store::ArtifactStore;
use storyverb_core::tasks::{load_predictions, GeneratedStory, TaskCatalog, TaskError, TaskId};

const EXIT_USAGE: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_BACKEND: i32 = 3;
const EXIT_PARTIAL: i32 = 4;

#[derive(Parser)]
#[command(name = "storyverb", version)]
#[command(about = "Video verbalization pipeline: signals to stories to task predictions")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Extract keyframes and text signals into per-video bundles.
    Verbalize(RunArgs),
    /// Generate one story per video from its signal bundle.
    Story(RunArgs),
    /// Run downstream tasks over generated stories.
    Tasks(TasksArgs),
    /// Score stories or task predictions against the dataset's labels.
    Evaluate(EvaluateArgs),
    /// Aggregate raw annotation sheets into strategy label sets.
    AggregateAnnotations(AggregateArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Inspect or clear the stage cache.
    Cache(CacheArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config file; omit to run on built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name: video_story, video_ads, or persuasion.
    #[arg(long)]
    dataset: String,
    /// Output directory; all artifacts land under it.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads. Output is identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Bind every backend-calling stage of this run to one backend id.
    #[arg(long)]
    backend: Option<String>,
    /// Shorthand for --pipeline.rng_seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct TasksArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated task names; omit to run every task the dataset
    /// supports.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// TOML config file; omit to run on built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name providing the gold labels.
    #[arg(long)]
    dataset: String,
    /// Output directory of a previous run: stories/ for video_story,
    /// predictions.jsonl otherwise.
    #[arg(long)]
    pred: PathBuf,
    /// Also write report.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AggregateArgs {
    /// Annotation sheet file: header annotator_id,video_id,q1..q15.
    #[arg(long)]
    sheets: PathBuf,
    /// Output directory for strategy_labels.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Drop videos whose inter-annotator agreement is below this.
    #[arg(long, default_value_t = 0.6)]
    min_agreement: f64,
    /// How many yes votes affirm a question.
    #[arg(long, value_enum, default_value_t = RuleArg::StrictMajority)]
    rule: RuleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    #[value(name = "strict_majority")]
    StrictMajority,
    #[value(name = "any_yes")]
    AnyYes,
    #[value(name = "unanimous")]
    Unanimous,
}

impl From<RuleArg> for AffirmationRule {
    fn from(rule: RuleArg) -> Self {
        match rule {
            RuleArg::StrictMajority => AffirmationRule::StrictMajority,
            RuleArg::AnyYes => AffirmationRule::AnyYes,
            RuleArg::Unanimous => AffirmationRule::Unanimous,
        }
    }
}

#[derive(clap::Args)]
struct StatsArgs {
    /// TOML config file; omit to run on built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name.
    #[arg(long)]
    dataset: String,
    /// Also write stats.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CacheArgs {
    /// TOML config file naming cache_dir.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Remove every cached record.
    #[arg(long)]
    clear: bool,
}

/// A failure carrying its process exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Gateway(_) | ConfigError::Fixture { .. } => {
                Failure::new(EXIT_BACKEND, e.to_string())
            }
            _ => Failure::config(e.to_string()),
        }
    }
}

impl From<corpus::CorpusError> for Failure {
    fn from(e: corpus::CorpusError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<storyverb_core::store::StoreError> for Failure {
    fn from(e: storyverb_core::store::StoreError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<eval::EvalError> for Failure {
    fn from(e: eval::EvalError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            PipelineError::UnknownTask(_)
            | PipelineError::NoTasks(_)
            | PipelineError::TaskDatasetMismatch { .. } => Failure::usage(e.to_string()),
            PipelineError::Task(TaskError::Backend { .. }) => {
                Failure::new(EXIT_BACKEND, e.to_string())
            }
            _ => Failure::config(e.to_string()),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let (overrides, argv) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    match run(cli, &overrides) {
        Ok(code) => std::process::exit(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            std::process::exit(failure.code);
        }
    }
}

/// Pulls `--section.key value` / `--section.key=value` pairs out of argv.
/// Dotted names are config paths, not declared flags, so they are applied
/// to the config separately and removed before normal parsing. `cache_dir`
/// is the one top-level leaf, so it is captured too.
fn split_overrides(args: Vec<String>) -> (Vec<(String, String)>, Vec<String>) {
    let mut overrides = Vec::new();
    let mut rest = Vec::new();
    let mut iter = args.into_iter().peekable();
    while let Some(arg) = iter.next() {
        let dotted = arg.strip_prefix("--").filter(|name| {
            let key = name.split('=').next().unwrap_or(name);
            key.contains('.') || key == "cache_dir"
        });
        match dotted {
            Some(name) => match name.split_once('=') {
                Some((key, value)) => overrides.push((key.to_string(), value.to_string())),
                None => {
                    let value = iter.next().unwrap_or_default();
                    overrides.push((name.to_string(), value));
                }
            },
            None => rest.push(arg),
        }
    }
    (overrides, rest)
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<i32, Failure> {
    match cli.verb {
        Verb::Verbalize(args) => {
            let setup = Setup::prepare(&args, overrides)?;
            let outcome = setup
                .runner()?
                .verbalize(&setup.dataset, &setup.dataset_root)?;
            finish("verbalize", outcome)
        }
        Verb::Story(args) => {
            let setup = Setup::prepare(&args, overrides)?;
            let outcome = setup.runner()?.stories(&setup.dataset)?;
            finish("story", outcome)
        }
        Verb::Tasks(args) => {
            let setup = Setup::prepare(&args.run, overrides)?;
            let selected = select_tasks(&args.tasks, setup.dataset.name)?;
            let catalog = TaskCatalog::builtin();
            let outcome = setup
                .runner()?
                .tasks(&setup.dataset, &selected, &catalog)?;
            finish("tasks", outcome)
        }
        Verb::Evaluate(args) => evaluate(args, overrides),
        Verb::AggregateAnnotations(args) => aggregate(args),
        Verb::Stats(args) => stats(args, overrides),
        Verb::Cache(args) => cache(args, overrides),
    }
}

/// Shared construction for the pipeline verbs: config with overrides
/// applied, dataset, gateway, and cache store.
struct Setup {
    config: Config,
    dataset: DatasetManifest,
    dataset_root: PathBuf,
    gateway: storyverb_core::gateway::Gateway,
    cache: Option<ArtifactStore>,
    out: PathBuf,
    jobs: usize,
}

impl Setup {
    fn prepare(args: &RunArgs, overrides: &[(String, String)]) -> Result<Setup, Failure> {
        let config = load_config(
            args.config.as_deref(),
            overrides,
            args.backend.as_deref(),
            args.seed,
        )?;
        let name = parse_dataset(&args.dataset)?;
        let root = config.dataset_root(name)?.to_path_buf();
        let dataset = load_dataset(name, &root, &TaskCatalog::builtin())?;
        let gateway = config.build_gateway(Arc::new(SystemClock::new()))?;
        let cache = config
            .cache_dir
            .as_deref()
            .map(ArtifactStore::open)
            .transpose()?;
        Ok(Setup {
            config,
            dataset,
            dataset_root: root,
            gateway,
            cache,
            out: args.out.clone(),
            jobs: args.jobs,
        })
    }

    fn runner(&self) -> Result<Runner<'_>, Failure> {
        Ok(Runner {
            cfg: &self.config.pipeline,
            bindings: self.config.stages.clone(),
            gateway: &self.gateway,
            out_dir: self.out.clone(),
            jobs: self.jobs,
            cache: self.cache.as_ref(),
            created_at: created_at(),
            templates: PromptTemplates::default(),
        })
    }
}

fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
    backend: Option<&str>,
    seed: Option<u64>,
) -> Result<Config, Failure> {
    let mut config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for (key, value) in overrides {
        config.apply_override(key, value)?;
    }
    if let Some(seed) = seed {
        config.pipeline.rng_seed = seed;
    }
    if let Some(backend) = backend {
        for stage in Stage::ALL {
            if stage.needs_backend() {
                config
                    .stages
                    .insert(stage.name().to_string(), backend.to_string());
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn parse_dataset(name: &str) -> Result<DatasetName, Failure> {
    DatasetName::parse(name).ok_or_else(|| {
        Failure::usage(format!(
            "unknown dataset {name:?} (expected video_story, video_ads, or persuasion)"
        ))
    })
}

fn select_tasks(requested: &[String], dataset: DatasetName) -> Result<Vec<TaskId>, Failure> {
    let supported = applicable_tasks(dataset);
    if supported.is_empty() {
        return Err(Failure::usage(format!(
            "dataset {} has no downstream tasks",
            dataset.name()
        )));
    }
    if requested.is_empty() {
        return Ok(supported.to_vec());
    }
    requested
        .iter()
        .map(|name| {
            let task = TaskId::parse(name)
                .ok_or_else(|| Failure::usage(format!("unknown task {name:?}")))?;
            if !supported.contains(&task) {
                return Err(Failure::usage(format!(
                    "task {name} does not apply to dataset {}",
                    dataset.name()
                )));
            }
            Ok(task)
        })
        .collect()
}

/// RFC 3339 timestamp for run manifests; `SOURCE_DATE_EPOCH` pins it for
/// reproducible output trees.
fn created_at() -> String {
    let time = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .map(|secs| SystemTime::UNIX_EPOCH + Duration::from_secs(secs))
        .unwrap_or_else(SystemTime::now);
    humantime::format_rfc3339_seconds(time).to_string()
}

fn finish(verb: &str, outcome: RunOutcome) -> Result<i32, Failure> {
    log::info!(
        "{verb}: {} video(s) ok, {} failed",
        outcome.ok,
        outcome.failed
    );
    for (vid, stages) in &outcome.manifest.videos {
        for (stage, status) in stages {
            if let storyverb_core::model::StageStatus::Failed(reason) = status {
                log::error!("{vid} {stage}: {reason}");
            }
        }
    }
    if outcome.all_failed() {
        return Err(Failure::new(
            EXIT_BACKEND,
            format!("{verb}: every video failed; see the run manifest"),
        ));
    }
    Ok(if outcome.partial() { EXIT_PARTIAL } else { 0 })
}

fn evaluate(args: EvaluateArgs, overrides: &[(String, String)]) -> Result<i32, Failure> {
    let config = load_config(args.config.as_deref(), overrides, None, None)?;
    let name = parse_dataset(&args.dataset)?;
    let root = config.dataset_root(name)?.to_path_buf();
    let catalog = TaskCatalog::builtin();
    let dataset = load_dataset(name, &root, &catalog)?;

    let report_json = match name {
        DatasetName::VideoStory => {
            let stories = read_stories(&args.pred.join("stories"))?;
            let report = eval::score_stories(&dataset, &stories)?;
            println!("{}", report.render_table().trim_end());
            serde_json::to_string_pretty(&report).expect("report serializes")
        }
        DatasetName::VideoAds | DatasetName::Persuasion => {
            let predictions = load_predictions(&args.pred.join("predictions.jsonl"))
                .map_err(|e| Failure::config(e.to_string()))?;
            let scores = eval::score_tasks(&dataset, &catalog, &predictions)?;
            for (task, accuracy) in &scores.accuracy {
                println!("{task:<20} {accuracy:6.2}");
            }
            for (task, report) in &scores.generation {
                println!("{task}:");
                for line in report.render_table().trim_end().lines() {
                    println!("  {line}");
                }
            }
            serde_json::to_string_pretty(&scores).expect("report serializes")
        }
    };

    if let Some(out) = &args.out {
        write_out_file(out, "report.json", &format!("{report_json}\n"))?;
    }
    Ok(0)
}

/// Story texts of a previous run, ordered by video id.
fn read_stories(dir: &Path) -> Result<Vec<(String, String)>, Failure> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Failure::config(format!("no stories under {}: {e}", dir.display())))?;
    let mut stories = BTreeMap::new();
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let story: GeneratedStory = serde_json::from_str(&raw)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        stories.insert(story.video_id.clone(), story.text);
    }
    if stories.is_empty() {
        return Err(Failure::config(format!(
            "no stories under {}",
            dir.display()
        )));
    }
    Ok(stories.into_iter().collect())
}

fn aggregate(args: AggregateArgs) -> Result<i32, Failure> {
    let sheets = load_annotation_sheets(&args.sheets)?;
    let qmap = QuestionStrategyMap::builtin();
    let (kept, dropped) =
        corpus::aggregate_annotations(&sheets, &qmap, args.min_agreement, args.rule.into())?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::config(format!("{}: {e}", args.out.display())))?;
    write_strategy_labels(&args.out.join("strategy_labels.jsonl"), &kept)?;
    log::info!(
        "aggregate-annotations: {} video(s) kept, {} dropped (agreement < {})",
        kept.len(),
        dropped.len(),
        args.min_agreement
    );
    for vid in &dropped {
        log::info!("dropped {vid}");
    }
    Ok(0)
}

fn stats(args: StatsArgs, overrides: &[(String, String)]) -> Result<i32, Failure> {
    let config = load_config(args.config.as_deref(), overrides, None, None)?;
    let name = parse_dataset(&args.dataset)?;
    let root = config.dataset_root(name)?.to_path_buf();
    let dataset = load_dataset(name, &root, &TaskCatalog::builtin())?;
    let stats = corpus::corpus_stats(&dataset);
    let body = serde_json::to_string_pretty(&stats).expect("stats serialize");
    println!("{body}");
    if let Some(out) = &args.out {
        write_out_file(out, "stats.json", &format!("{body}\n"))?;
    }
    Ok(0)
}

fn cache(args: CacheArgs, overrides: &[(String, String)]) -> Result<i32, Failure> {
    let config = load_config(args.config.as_deref(), overrides, None, None)?;
    let Some(dir) = &config.cache_dir else {
        return Err(Failure::config(
            "no cache_dir configured; set it in the config file or pass --cache_dir",
        ));
    };
    let store = ArtifactStore::open(dir)?;
    if args.clear {
        let removed = store.clear()?;
        println!("removed {removed} cached record(s)");
    } else {
        println!("{} cached record(s) under {}", store.len()?, dir.display());
    }
    Ok(0)
}

fn write_out_file(dir: &Path, file: &str, body: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(file);
    std::fs::write(&path, body).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}
