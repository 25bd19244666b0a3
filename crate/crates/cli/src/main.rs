//! `pjfit`: reproducible runs over the person-job pretraining pipeline.
//!
//! Subcommands mirror the pipeline stages: `gen-corpus`, `pretrain`,
//! `eval`, `ablate`, `export-embeddings`, `grid-search`. Every run writes
//! its artifacts plus a `manifest.json` recording the resolved config,
//! input hashes and produced files.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config/validation error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pjfit_core::corpus::{generate, load_corpus, save_corpus, Corpus, CorpusConfig, CorpusError};
use pjfit_core::eval::{
    ablation_table, export_embeddings, job_rec_validation_auc, report_table, run_ablation,
    run_downstream, DownstreamTask, EvalError,
};
use pjfit_core::model::ModelError;
use pjfit_core::trainer::{
    apply_override, grid_search, pretrain, save_with_optimizer, TrainConfig, TrainError,
};
use pjfit_core::Model;

#[derive(Parser)]
#[command(name = "pjfit", version, about = "Hierarchical person-job embedding pretraining at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Override a config field by dot path, e.g. --set lambda.app=0
    #[arg(long = "set", value_name = "PATH=JSON")]
    set: Vec<String>,
    /// Shorthand for --set seed=N
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a config file.
    GenCorpus {
        /// CorpusConfig JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Pretrain a model on a corpus.
    Pretrain {
        /// Corpus file produced by gen-corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// TrainConfig JSON file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on a downstream task.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// job_rec or candidate_rec.
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the four-task ablation protocol (five training runs).
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Export individual- or final-level embeddings as JSON lines.
    ExportEmbeddings {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// individual or final.
        #[arg(long)]
        level: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the config's hyper-parameter grid and report every cell.
    GridSearch {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

// ── errors and exit codes ────────────────────────────────────────────

enum CliError {
    /// Bad configuration, bad flags, missing or malformed inputs: exit 2.
    Config(String),
    /// Everything that fails after inputs validated: exit 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::InvalidConfig(_)
            | CorpusError::Parse { .. }
            | CorpusError::Validation(_)
            | CorpusError::RatioUnachievable(_) => CliError::Config(e.to_string()),
            CorpusError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::Config(_) | TrainError::EmptyPool { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::MissingSplit(_) | EvalError::UnknownUser(_) | EvalError::UnknownJob(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::CheckpointMismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

// ── manifest ─────────────────────────────────────────────────────────

#[derive(Serialize)]
struct RunManifest {
    command: String,
    resolved_config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<String>,
    reports: Vec<String>,
    /// Every file this run produced.
    artifacts: Vec<String>,
    started: String,
    finished: String,
    tool_version: String,
}

struct ManifestBuilder {
    command: String,
    resolved_config: serde_json::Value,
    corpus_hash: Option<String>,
    checkpoint: Option<String>,
    reports: Vec<String>,
    artifacts: Vec<String>,
    started: String,
}

impl ManifestBuilder {
    fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            resolved_config: serde_json::Value::Null,
            corpus_hash: None,
            checkpoint: None,
            reports: Vec::new(),
            artifacts: Vec::new(),
            started: chrono::Utc::now().to_rfc3339(),
        }
    }

    fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    fn report(&mut self, path: &Path) {
        self.reports.push(path.display().to_string());
        self.artifact(path);
    }

    fn write(mut self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("manifest.json");
        self.artifacts.push(path.display().to_string());
        let manifest = RunManifest {
            command: self.command,
            resolved_config: self.resolved_config,
            corpus_hash: self.corpus_hash,
            checkpoint: self.checkpoint,
            reports: self.reports,
            artifacts: self.artifacts,
            started: self.started,
            finished: chrono::Utc::now().to_rfc3339(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(path, body)?;
        Ok(())
    }
}

// ── config loading ───────────────────────────────────────────────────

fn read_json_config(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))
}

fn apply_cli_overrides(
    json: &mut serde_json::Value,
    overrides: &Overrides,
) -> Result<(), CliError> {
    if let Some(seed) = overrides.seed {
        apply_override(json, "seed", serde_json::json!(seed))
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    for spec in &overrides.set {
        let (path, raw) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects PATH=JSON, got {spec}")))?;
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        apply_override(json, path, value).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn load_corpus_config(path: &Path, overrides: &Overrides) -> Result<CorpusConfig, CliError> {
    let mut json = read_json_config(path)?;
    apply_cli_overrides(&mut json, overrides)?;
    serde_json::from_value(json).map_err(|e| CliError::Config(format!("bad corpus config: {e}")))
}

fn load_train_config(path: &Path, overrides: &Overrides) -> Result<TrainConfig, CliError> {
    let mut json = read_json_config(path)?;
    apply_cli_overrides(&mut json, overrides)?;
    serde_json::from_value(json).map_err(|e| CliError::Config(format!("bad train config: {e}")))
}

fn load_corpus_file(path: &Path) -> Result<Corpus, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("corpus file {} does not exist", path.display())));
    }
    Ok(load_corpus(path)?)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let (model, _, _) = Model::load_checkpoint(path)?;
    Ok(model)
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

// ── subcommand bodies ────────────────────────────────────────────────

fn cmd_gen_corpus(config: &Path, out: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let config = load_corpus_config(config, overrides)?;
    ensure_out_dir(out)?;
    let mut manifest = ManifestBuilder::new("gen-corpus");
    manifest.resolved_config =
        serde_json::to_value(&config).map_err(|e| CliError::Runtime(e.to_string()))?;

    let corpus = generate(&config)?;
    let corpus_path = out.join("corpus.jsonl");
    save_corpus(&corpus_path, &corpus)?;
    manifest.corpus_hash = Some(corpus.content_hash());
    manifest.artifact(&corpus_path);
    manifest.write(out)?;
    println!(
        "corpus: {} profiles, {} jobs, {} interactions -> {}",
        corpus.profiles.len(),
        corpus.jobs.len(),
        corpus.interactions.len(),
        corpus_path.display()
    );
    Ok(())
}

fn cmd_pretrain(
    corpus_path: &Path,
    config_path: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let config = load_train_config(config_path, overrides)?;
    config.validate().map_err(CliError::from)?;
    let corpus = load_corpus_file(corpus_path)?;
    ensure_out_dir(out)?;

    let mut manifest = ManifestBuilder::new("pretrain");
    manifest.resolved_config =
        serde_json::to_value(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    manifest.corpus_hash = Some(corpus.content_hash());

    let (model, adam, log) = pretrain(&corpus, &config, Some(out))?;
    let ckpt = out.join("model.ckpt");
    save_with_optimizer(&model, &adam, &ckpt, config.steps)?;
    let log_path = out.join("train_log.jsonl");
    log.save(&log_path)?;

    manifest.checkpoint = Some(ckpt.display().to_string());
    manifest.artifact(&ckpt);
    manifest.artifact(&log_path);
    if config.checkpoint_every > 0 {
        let mut step = config.checkpoint_every;
        while step <= config.steps {
            manifest.artifact(&pjfit_core::trainer::checkpoint_path(out, step));
            step += config.checkpoint_every;
        }
    }
    manifest.write(out)?;
    let last = log.entries.last().expect("steps > 0");
    println!(
        "pretrained {} steps; joint loss {:.4} -> {:.4}; checkpoint {}",
        config.steps,
        log.entries[0].joint,
        last.joint,
        ckpt.display()
    );
    Ok(())
}

fn parse_task(task: &str) -> Result<DownstreamTask, CliError> {
    match task {
        "job_rec" => Ok(DownstreamTask::JobRec),
        "candidate_rec" => Ok(DownstreamTask::CandidateRec),
        other => Err(CliError::Config(format!(
            "unknown task {other}; expected job_rec or candidate_rec"
        ))),
    }
}

fn cmd_eval(
    corpus_path: &Path,
    checkpoint: &Path,
    task: &str,
    out: &Path,
) -> Result<(), CliError> {
    let task = parse_task(task)?;
    let corpus = load_corpus_file(corpus_path)?;
    let model = load_model(checkpoint)?;
    ensure_out_dir(out)?;

    let mut manifest = ManifestBuilder::new("eval");
    manifest.corpus_hash = Some(corpus.content_hash());
    manifest.checkpoint = Some(checkpoint.display().to_string());
    manifest.resolved_config = serde_json::json!({"task": task});

    let report = run_downstream(&model, &corpus, task)?;
    let json_path = out.join(format!("report_{task}.json"));
    let text_path = out.join(format!("report_{task}.txt"));
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    std::fs::write(&text_path, report_table(&report))?;
    manifest.report(&json_path);
    manifest.report(&text_path);
    manifest.write(out)?;
    print!("{}", report_table(&report));
    Ok(())
}

fn cmd_ablate(
    corpus_path: &Path,
    config_path: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let config = load_train_config(config_path, overrides)?;
    config.validate().map_err(CliError::from)?;
    let corpus = load_corpus_file(corpus_path)?;
    ensure_out_dir(out)?;

    let mut manifest = ManifestBuilder::new("ablate");
    manifest.resolved_config =
        serde_json::to_value(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    manifest.corpus_hash = Some(corpus.content_hash());

    let report = run_ablation(&corpus, &config)?;
    let json_path = out.join("ablation.json");
    let text_path = out.join("ablation.txt");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    std::fs::write(&text_path, ablation_table(&report))?;
    manifest.report(&json_path);
    manifest.report(&text_path);
    manifest.write(out)?;
    print!("{}", ablation_table(&report));
    Ok(())
}

fn cmd_export(
    corpus_path: &Path,
    checkpoint: &Path,
    level: &str,
    out: &Path,
) -> Result<(), CliError> {
    if !pjfit_core::eval::EXPORT_LEVELS.contains(&level) {
        return Err(CliError::Config(format!(
            "unknown embedding level {level}; expected one of {:?}",
            pjfit_core::eval::EXPORT_LEVELS
        )));
    }
    let corpus = load_corpus_file(corpus_path)?;
    let model = load_model(checkpoint)?;
    ensure_out_dir(out)?;

    let mut manifest = ManifestBuilder::new("export-embeddings");
    manifest.corpus_hash = Some(corpus.content_hash());
    manifest.checkpoint = Some(checkpoint.display().to_string());
    manifest.resolved_config = serde_json::json!({"level": level});

    let path = out.join(format!("embeddings_{level}.jsonl"));
    let count = export_embeddings(&model, &corpus, level, &path)?;
    manifest.artifact(&path);
    manifest.write(out)?;
    println!("wrote {count} embedding records to {}", path.display());
    Ok(())
}

fn cmd_grid_search(
    corpus_path: &Path,
    config_path: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let config = load_train_config(config_path, overrides)?;
    if config.grid.as_ref().is_none_or(|g| g.is_empty()) {
        return Err(CliError::Config("grid-search needs a non-empty grid in the config".into()));
    }
    let corpus = load_corpus_file(corpus_path)?;
    ensure_out_dir(out)?;

    let mut manifest = ManifestBuilder::new("grid-search");
    manifest.resolved_config =
        serde_json::to_value(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    manifest.corpus_hash = Some(corpus.content_hash());

    let report = grid_search(
        &corpus,
        &config,
        |model, corpus| {
            job_rec_validation_auc(model, corpus).map_err(|e| {
                pjfit_core::trainer::TrainError::Config(format!("validation metric failed: {e}"))
            })
        },
        "job_rec validation AUC",
    )?;
    let json_path = out.join("grid_report.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    manifest.report(&json_path);
    manifest.write(out)?;

    for cell in &report.cells {
        match (&cell.metric, &cell.error) {
            (Some(m), _) => println!("{} -> {m:.4}", serde_json::to_string(&cell.overrides).unwrap()),
            (None, Some(e)) => println!("{} -> error: {e}", serde_json::to_string(&cell.overrides).unwrap()),
            _ => {}
        }
    }
    if let Some(best) = &report.best {
        println!("best: {}", serde_json::to_string(best).unwrap());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenCorpus { config, out, overrides } => cmd_gen_corpus(config, out, overrides),
        Command::Pretrain { corpus, config, out, overrides } => {
            cmd_pretrain(corpus, config, out, overrides)
        }
        Command::Eval { corpus, checkpoint, task, out } => cmd_eval(corpus, checkpoint, task, out),
        Command::Ablate { corpus, config, out, overrides } => {
            cmd_ablate(corpus, config, out, overrides)
        }
        Command::ExportEmbeddings { corpus, checkpoint, level, out } => {
            cmd_export(corpus, checkpoint, level, out)
        }
        Command::GridSearch { corpus, config, out, overrides } => {
            cmd_grid_search(corpus, config, out, overrides)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pjfit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
