//! Command-line entry points. The `mce` binary is a thin wrapper around
//! [`main_with`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde_json::Value;
use thiserror::Error;

use crate::config::{CliConfig, ConfigError};
use crate::evolution::{Evolution, EvolutionError, Mode, OnlineVariant};
use crate::gateway::{MockScript, MockServer};
use crate::harness::SandboxEnv;
use crate::model::{ContextArtifact, DataInstance, DataSplit, ModelError, SplitKind, Target};
use crate::report::{workspace_report, ReportError};
use crate::rollout::{rollout, validate_artifact, RetrievalConfig, RetrievalProtocol};
use crate::workspace::{init_workspace, WorkspaceConfig, WorkspaceError, WorkspaceLayout, WorkspaceLock, DEFAULT_ENTRYPOINT};

#[derive(Debug, Parser)]
#[command(name = "mce", version, about = "Evolve skills and context artifacts for a frozen generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw JSON-lines into canonical train/val/test split files.
    Ingest(IngestArgs),
    /// Run an offline (or online) experiment from a config file.
    Train(TrainArgs),
    /// Score an artifact on one split.
    Eval(EvalArgs),
    /// Summarize a workspace.
    Report(ReportArgs),
    /// Check that an artifact's entrypoint answers the retrieval protocol.
    ValidateArtifact(ValidateArgs),
    /// Serve a scripted mock endpoint.
    MockServe(MockArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Source JSON-lines file(s), concatenated in order.
    #[arg(long = "source", required = true)]
    pub sources: Vec<PathBuf>,
    /// Built-in task name (only used to pick field mappings).
    #[arg(long)]
    pub task: String,
    /// Output directory for train.jsonl / val.jsonl / test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Split sizes "train,val,test". Without sizes the sources are taken
    /// as one file per split in that order.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Shuffle before splitting with this seed.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    FixedSkill,
    NoSkill,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Stream split for online mode.
    #[arg(long, value_enum, default_value = "test")]
    pub stream: SplitArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Artifact directory (holding `context/` and the entrypoint).
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Where to write the rollout; defaults to `.mce/eval/` in the workspace.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub workspace: PathBuf,
    #[arg(long, default_value = DEFAULT_ENTRYPOINT)]
    pub entrypoint: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value = DEFAULT_ENTRYPOINT)]
    pub entrypoint: String,
    /// Probe question; repeatable.
    #[arg(long = "question", default_value = "What is the answer?")]
    pub questions: Vec<String>,
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8089")]
    pub addr: SocketAddr,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

macro_rules! run_err {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Run(e.to_string())
            }
        }
    )*};
}
run_err!(EvolutionError, ModelError, WorkspaceError, ReportError, std::io::Error);

fn pick<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| v.get(k)).filter(|v| !v.is_null())
}

fn target_of(v: &Value) -> Option<Target> {
    match v {
        Value::String(s) => Some(Target::Text(s.clone())),
        Value::Array(items) => items.iter().map(|i| i.as_str().map(str::to_string)).collect::<Option<Vec<_>>>().map(Target::Labels),
        Value::Number(n) => Some(Target::Text(n.to_string())),
        Value::Bool(b) => Some(Target::Text(b.to_string())),
        _ => None,
    }
}

/// Parses one source file. Aegis rows (`prompt` / `prompt_label`) and a few
/// common aliases are mapped onto `question` / `target`.
pub fn ingest_rows(task: &str, text: &str, first_id: u64) -> Result<Vec<DataInstance>, ModelError> {
    let (q_keys, t_keys): (&[&str], &[&str]) = if task == "aegis2" {
        (&["prompt", "question"], &["prompt_label", "target"])
    } else {
        (&["question", "input", "prompt"], &["target", "answer", "output", "label"])
    };
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ModelError::Line { line: idx + 1, message };
        let row: Value = serde_json::from_str(line).map_err(|_| err("parse failure".into()))?;
        let question = pick(&row, q_keys).and_then(Value::as_str).ok_or_else(|| err(format!("missing {}", q_keys[0])))?;
        let target = pick(&row, t_keys).and_then(target_of).ok_or_else(|| err(format!("missing {}", t_keys[0])))?;
        let target = match (task, target) {
            ("aegis2", Target::Text(t)) => Target::Text(t.trim().to_lowercase()),
            (_, t) => t,
        };
        let id = row.get("id").and_then(Value::as_u64).unwrap_or(first_id + out.len() as u64);
        out.push(DataInstance { id, question: question.to_string(), target });
    }
    Ok(out)
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<Vec<(SplitKind, usize)>, CliError> {
    let kinds = [SplitKind::Train, SplitKind::Val, SplitKind::Test];
    let mut files = Vec::new();
    let mut next_id = 0u64;
    for path in &args.sources {
        let text = std::fs::read_to_string(path)?;
        let rows = ingest_rows(&args.task, &text, next_id).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
        next_id += rows.len() as u64;
        files.push(rows);
    }
    let groups: Vec<Vec<DataInstance>> = match &args.sizes {
        Some(sizes) => {
            if sizes.is_empty() || sizes.len() > 3 {
                return Err(CliError::Usage("--sizes takes one to three numbers".into()));
            }
            let mut all: Vec<DataInstance> = files.into_iter().flatten().collect();
            let needed: usize = sizes.iter().sum();
            if needed > all.len() {
                return Err(CliError::Run(format!("sizes need {needed} instances, sources hold {}", all.len())));
            }
            if let Some(seed) = args.shuffle_seed {
                all.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            }
            let mut start = 0;
            sizes
                .iter()
                .map(|n| {
                    let g = all[start..start + n].to_vec();
                    start += n;
                    g
                })
                .collect()
        }
        None => {
            if files.len() > 3 {
                return Err(CliError::Usage("without --sizes give at most three sources (train, val, test)".into()));
            }
            files
        }
    };
    std::fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();
    for (kind, rows) in kinds.into_iter().zip(groups) {
        let split = DataSplit::new(kind, rows)?;
        split.write_jsonl(&args.out.join(format!("{kind}.jsonl")))?;
        written.push((kind, split.len()));
    }
    Ok(written)
}

fn split_path(config: &CliConfig, split: SplitArg) -> Result<(SplitKind, PathBuf), CliError> {
    let (kind, path) = match split {
        SplitArg::Train => (SplitKind::Train, &config.data.train),
        SplitArg::Val => (SplitKind::Val, &config.data.val),
        SplitArg::Test => (SplitKind::Test, &config.data.test),
    };
    let path = path.clone().ok_or_else(|| CliError::Usage(format!("config has no [data] {kind} file")))?;
    Ok((kind, path))
}

fn load_split(config: &CliConfig, split: SplitArg) -> Result<DataSplit, CliError> {
    let (kind, path) = split_path(config, split)?;
    Ok(DataSplit::read_jsonl(kind, &path)?)
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

pub async fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut config = CliConfig::load(&args.config)?;
    if let Some(mode) = args.mode {
        config.run.mode = match mode {
            ModeArg::Offline => Mode::Offline,
            ModeArg::Online => Mode::Online,
        };
    }
    if let Some(variant) = args.variant {
        config.run.online_variant = match variant {
            VariantArg::FixedSkill => OnlineVariant::FixedSkill,
            VariantArg::NoSkill => OnlineVariant::NoSkill,
        };
    }
    config.run.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = config.task_spec()?;
    let train = load_split(&config, SplitArg::Train)?;
    let conn = config.connect(&spec).await?;
    let layout = init_workspace(&config.workspace.base, &train, config.workspace.layout.clone())?;
    let _lock = WorkspaceLock::acquire(layout.base())?;

    let mut evo = Evolution::new(layout, spec, conn.generator, conn.agent, config.run.clone());
    evo.limits = config.limits.session.clone();
    evo.retrieval = config.limits.retrieval.clone();
    evo.env = conn.env;

    match config.run.mode {
        Mode::Offline => {
            let val = load_split(&config, SplitArg::Val)?;
            println!("{:>4}  {:>8}  {:>8}  {:<16}  {:>4}", "k", "train", "val", "status", "best");
            let outcome = evo.run_offline(&train, &val).await;
            let report = match &outcome {
                Ok(o) => o.report.clone(),
                Err(_) => match std::fs::read(evo.layout.run_report_path()) {
                    Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| CliError::Run(e.to_string()))?,
                    Err(_) => return Err(CliError::Run(outcome.err().map(|e| e.to_string()).unwrap_or_default())),
                },
            };
            for row in &report.iterations {
                let best = row.best_iteration.map_or("-".into(), |k| k.to_string());
                let mark = if row.promoted { "*" } else { "" };
                println!("{:>4}  {:>8}  {:>8}  {:<16}  {:>4}{mark}", row.iteration, fmt_score(row.train), fmt_score(row.val), row.status.to_string(), best);
            }
            outcome?;
            println!("best: iter{} (val {})", report.best_iteration.unwrap_or(0), fmt_score(report.best_val));
            println!("run report: {}", evo.layout.run_report_path().display());
        }
        Mode::Online => {
            let stream = load_split(&config, args.stream)?;
            let outcome = evo.run_online(&stream).await?;
            for u in &outcome.updates {
                println!("after {:>4}: {} {}", u.after, if u.ok { "updated" } else { "kept" }, u.detail.as_deref().unwrap_or(""));
            }
            println!("online ({:?}): {} = {:.4} over {} instances", outcome.variant, outcome.score.metric, outcome.score.value, outcome.score.n);
        }
    }
    Ok(())
}

pub async fn cmd_eval(args: &EvalArgs) -> Result<f64, CliError> {
    let config = CliConfig::load(&args.config)?;
    let spec = config.task_spec()?;
    let (kind, path) = split_path(&config, args.split)?;
    let split = DataSplit::read_jsonl(kind, &path)?;
    if split.is_empty() {
        return Err(CliError::Run(ModelError::EmptySplit.to_string()));
    }
    let conn = config.connect(&spec).await?;
    let artifact_dir = std::fs::canonicalize(&args.artifact)?;
    let mut artifact = ContextArtifact::at(&artifact_dir, &config.workspace.layout.entrypoint_name);
    let protocol = RetrievalProtocol::for_artifact(&artifact, &artifact_dir, config.limits.retrieval.clone(), conn.env.clone());
    let probes: Vec<String> = split.instances().iter().take(config.run.probes).map(|i| i.question.clone()).collect();
    let report = validate_artifact(&mut artifact, &protocol, &probes).await;
    if !report.passed() {
        eprintln!("{report}");
        return Err(CliError::Run(report.failure().unwrap_or_else(|| "artifact invalid".into())));
    }
    let set = rollout(&spec, &split, &conn.generator, &protocol).await?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            let name = artifact_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "artifact".into());
            config.workspace.base.join(crate::workspace::INTERNAL_DIR).join("eval").join(format!("{name}.{kind}.json"))
        }
    };
    set.write(&out)?;
    println!("{} on {kind}: {:.4} ({} instances) -> {}", set.summary.score.metric, set.summary.score.value, set.summary.n, out.display());
    Ok(set.summary.score.value)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let layout = WorkspaceLayout::open(
        &args.workspace,
        WorkspaceConfig { entrypoint_name: args.entrypoint.clone(), utils_payload: None },
    )?;
    let report = workspace_report(&layout)?;
    Ok(if args.json { serde_json::to_string_pretty(&report).map_err(|e| CliError::Run(e.to_string()))? } else { report.to_string() })
}

pub async fn cmd_validate(args: &ValidateArgs) -> Result<bool, CliError> {
    let dir = std::fs::canonicalize(&args.artifact)?;
    let mut artifact = ContextArtifact::at(&dir, &args.entrypoint);
    let retrieval = RetrievalConfig { timeout: std::time::Duration::from_secs_f64(args.timeout), ..RetrievalConfig::default() };
    let protocol = RetrievalProtocol::for_artifact(&artifact, &dir, retrieval, SandboxEnv::from_process());
    let report = validate_artifact(&mut artifact, &protocol, &args.questions).await;
    println!("{report}");
    Ok(report.passed())
}

pub async fn cmd_mock_serve(args: &MockArgs) -> Result<(), CliError> {
    let script = MockScript::load(&args.script).map_err(|e| CliError::Usage(e.to_string()))?;
    let server = MockServer::start_on(script, None, args.addr).await.map_err(|e| CliError::Run(e.to_string()))?;
    println!("mock endpoint at {}", server.base_url());
    server.serve_forever().await;
    Ok(())
}

pub async fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => {
            for (kind, n) in cmd_ingest(&args)? {
                println!("{kind}: {n} instances -> {}", args.out.join(format!("{kind}.jsonl")).display());
            }
        }
        Command::Train(args) => cmd_train(&args).await?,
        Command::Eval(args) => {
            cmd_eval(&args).await?;
        }
        Command::Report(args) => print!("{}", cmd_report(&args)?),
        Command::ValidateArtifact(args) => {
            if !cmd_validate(&args).await? {
                return Err(CliError::Run("artifact failed validation".into()));
            }
        }
        Command::MockServe(args) => cmd_mock_serve(&args).await?,
    }
    Ok(())
}

/// Parses `args`, runs the command and maps the result to an exit code:
/// 0 success, 1 usage or config error, 2 run failure.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
