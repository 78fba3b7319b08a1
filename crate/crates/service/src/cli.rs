//! The `classroom` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use chrono::{TimeZone, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use classroom_core::evaluation::{coi_report, export_results_csv, word_count_stats, DEFAULT_GATE_THRESHOLD};
use classroom_core::fias::{label_utterances, load_encoded, EncodedSession, LlmLabeler, RuleLabeler};
use classroom_core::session::{run_session_with, ReplaySource, RunOptions, Silent, UserSource};
use classroom_core::store::{SessionHeader, TranscriptStore};
use classroom_core::{apply_ablation, default_roster, Ablation, Roster};

use crate::catalog::{backend_factory, build_backend, resolve_course, Catalog};
use crate::config::{BackendKind, ServiceConfig};
use crate::report::{emit, encoded_report, load_records};

#[derive(Debug, Parser)]
#[command(name = "classroom", version, about = "Multi-agent classroom simulation and analysis")]
pub struct Cli {
    /// TOML (or .json) config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one class headlessly and store its transcript.
    Run(RunArgs),
    /// Start the HTTP/WebSocket API.
    Serve(ServeArgs),
    #[command(subcommand)]
    Analyze(Analyze),
    #[command(subcommand)]
    Stats(Stats),
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Reply fixture for the scripted backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Course file, or a course id under the courses directory.
    #[arg(long)]
    pub course: String,
    #[arg(long, default_value = "full")]
    pub ablation: Ablation,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// JSONL of `{"after_seq": n, "text": ".."}` participant messages.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Session store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub courses_dir: Option<PathBuf>,
    #[arg(long)]
    pub session_id: Option<String>,
    /// JSON file of agent specs overriding default-roster entries.
    #[arg(long)]
    pub roster: Option<PathBuf>,
    /// Idle window in seconds (0 for back-to-back actions).
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    /// Also write the session's JSONL to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub courses_dir: Option<PathBuf>,
    #[arg(long)]
    pub quizzes_dir: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Require `Authorization: Bearer <token>` on every request.
    #[arg(long, env = "CLASSROOM_API_TOKEN")]
    pub token: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Sessions to summed interaction matrix and metrics.
    Fias(FiasArgs),
    /// Survey responses to presence summaries.
    Coi(CoiArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Labeler {
    Rule,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct FiasArgs {
    /// Session files to label and sum.
    #[arg(long, required_unless_present = "encoded", conflicts_with = "encoded")]
    pub glob: Option<String>,
    /// Pre-encoded sessions (JSONL of `{"session_id", "sequence"}`).
    #[arg(long)]
    pub encoded: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rule")]
    pub labeler: Labeler,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Write the encoded sequences to this JSONL file.
    #[arg(long)]
    pub save_encoded: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoiArgs {
    #[arg(long)]
    pub glob: String,
    /// Quiz scores at or below this are excluded.
    #[arg(long, default_value_t = DEFAULT_GATE_THRESHOLD)]
    pub threshold: f64,
    /// Also write per-participant rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Stats {
    /// Average words per utterance by role, course and setting.
    Lengths(LengthsArgs),
}

#[derive(Debug, Args)]
pub struct LengthsArgs {
    #[arg(long)]
    pub glob: String,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let config = ServiceConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Run(args) => run(args, &config),
        Command::Serve(args) => serve(args, config),
        Command::Analyze(Analyze::Fias(args)) => analyze_fias(args, &config),
        Command::Analyze(Analyze::Coi(args)) => analyze_coi(args),
        Command::Stats(Stats::Lengths(args)) => stats_lengths(args),
    }
}

fn backend_for(args: &BackendArgs, config: &ServiceConfig) -> anyhow::Result<Arc<dyn classroom_core::backend::ChatBackend>> {
    let kind = args.backend.unwrap_or(config.server.backend);
    let fixture = args.fixture.as_deref().or(config.server.fixture.as_deref());
    build_backend(kind, fixture, &config.backend)
}

fn roster_for(ablation: Ablation, overrides: Option<&Path>) -> anyhow::Result<Roster> {
    let mut roster = default_roster();
    if let Some(path) = overrides {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        roster = roster.merge_overrides(Roster::parse_overrides(&text)?)?;
    }
    Ok(apply_ablation(&roster, ablation))
}

fn run(args: RunArgs, config: &ServiceConfig) -> anyhow::Result<()> {
    let courses_dir = args.courses_dir.clone().unwrap_or_else(|| config.server.courses_dir.clone());
    let course = Arc::new(resolve_course(&args.course, &courses_dir)?);
    let roster = roster_for(args.ablation, args.roster.as_deref())?;
    let backend = backend_for(&args.backend, config)?;
    if !(args.tau >= 0.0 && args.tau.is_finite()) {
        bail!("--tau must be a non-negative number of seconds");
    }
    let mut session_config = config.session.clone();
    session_config.tau = std::time::Duration::from_secs_f64(args.tau);
    let mut user: Box<dyn UserSource> = match &args.replay {
        Some(path) => Box::new(ReplaySource::load(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?),
        None => Box::new(Silent),
    };

    let store = TranscriptStore::open(args.store.clone().unwrap_or_else(|| config.server.data_dir.clone()))?;
    let session_id = args.session_id.clone().unwrap_or_else(|| {
        let now = Utc::now();
        format!("{}-{}-{}", course.id, args.ablation, now.format("%Y%m%dT%H%M%S%3f"))
    });
    let mut options = RunOptions::for_course(&course, &roster);
    options.session_id = session_id.clone();
    options.start = Utc.timestamp_millis_opt(Utc::now().timestamp_millis()).unwrap();
    let header = SessionHeader {
        session_id: session_id.clone(),
        course_id: course.id.clone(),
        setting: roster.ablation(),
        created_at: options.start,
        roster: roster.clone(),
        config: session_config.clone(),
    };
    let writer = store.create(&header)?;
    options.sinks.push(Box::new(writer));
    let record = run_session_with(course, roster, session_config, user.as_mut(), backend, options)?;
    if let Some(fault) = &record.fault {
        // The writer was moved into the session; reopen it for the marker.
        store.writer(&session_id)?.append(classroom_core::store::StoreLine::Fault(fault.clone()))?;
    }
    let path = store.path_of(&session_id)?;
    if let Some(out) = &args.out {
        store.export(&session_id, out)?;
    }
    let utterances = record.utterances().len();
    println!(
        "session {session_id}: {} events, {utterances} utterances, phase {:?} -> {}",
        record.events.len(),
        record.phase(),
        path.display()
    );
    if let Some(fault) = record.fault {
        bail!("class ended with a fault after seq {}: {}", fault.after_seq, fault.message);
    }
    Ok(())
}

fn serve(args: ServeArgs, mut config: ServiceConfig) -> anyhow::Result<()> {
    if let Some(v) = args.bind {
        config.server.bind = v;
    }
    if let Some(v) = args.store {
        config.server.data_dir = v;
    }
    if let Some(v) = args.courses_dir {
        config.server.courses_dir = v;
    }
    if let Some(v) = args.quizzes_dir {
        config.server.quizzes_dir = v;
    }
    if args.token.is_some() {
        config.server.token = args.token;
    }
    let kind = args.backend.backend.unwrap_or(config.server.backend);
    let fixture = args.backend.fixture.clone().or(config.server.fixture.clone());
    let backend = backend_factory(kind, fixture.as_deref(), &config.backend)?;
    let catalog = Catalog::load(&config.server.courses_dir, &config.server.quizzes_dir)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::serve(config, catalog, backend))
}

fn analyze_fias(args: FiasArgs, config: &ServiceConfig) -> anyhow::Result<()> {
    let encoded: Vec<EncodedSession> = match (&args.encoded, &args.glob) {
        (Some(path), _) => load_encoded(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(pattern)) => {
            let records = load_records(pattern)?;
            let llm = match args.labeler {
                Labeler::Llm => Some(backend_for(&args.backend, config)?),
                Labeler::Rule => None,
            };
            let mut out = Vec::with_capacity(records.len());
            for r in &records {
                let enc = match &llm {
                    Some(b) => label_utterances(r, &LlmLabeler::new(b.clone()).with_silence_gap(r.header.config.tau))?,
                    None => label_utterances(r, &RuleLabeler::for_record(r))?,
                };
                if !enc.flagged.is_empty() {
                    log::warn!("{}: {} utterances could not be labeled", enc.session_id, enc.flagged.len());
                }
                out.push(enc);
            }
            out
        }
        (None, None) => bail!("either --glob or --encoded is required"),
    };
    if encoded.is_empty() {
        bail!("no sessions to analyze");
    }
    if let Some(path) = &args.save_encoded {
        crate::report::write_atomic(path, classroom_core::fias::encoded_to_jsonl(&encoded).as_bytes())?;
    }
    let report = encoded_report(&encoded)?;
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        Format::Text => report.to_text(),
    };
    emit(args.out.as_deref(), &text)
}

fn analyze_coi(args: CoiArgs) -> anyhow::Result<()> {
    let records = load_records(&args.glob)?;
    let groups = coi_report(&records, args.threshold);
    if let Some(path) = &args.csv {
        let mut buf = Vec::new();
        export_results_csv(&records, args.threshold, &mut buf)?;
        crate::report::write_atomic(path, &buf)?;
    }
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&groups)?)
}

fn stats_lengths(args: LengthsArgs) -> anyhow::Result<()> {
    let records = load_records(&args.glob)?;
    let table = word_count_stats(&records);
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&table)?,
        Format::Text => table.to_string(),
    };
    emit(args.out.as_deref(), &text)
}
