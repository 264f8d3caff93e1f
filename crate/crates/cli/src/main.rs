//! `gforge`: annotate a PubTator corpus with an LLM, score it, and run the
//! guideline moderation loop.
//!
//! Exit status is 0 on success, 1 when the command fails for a domain reason
//! (bad input, failed run, backend error) and 2 for usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gforge_core::corpus::{parse_pubtator, write_document, Corpus};
use gforge_core::guidelines::{parse_guideline, Edit};
use gforge_core::metrics::{evaluate, Evaluation};
use gforge_core::prompting::{PromptBuilder, Templates};
use gforge_core::report::{render_by_category, render_overall, TableFormat};
use gforge_engine::summary::summarize;
use gforge_engine::{
    annotate_documents, Engine, PromptMode, ReviewDecision, ReviewMode, ReviewRequest, RunConfig, RunRecord, RunStatus, RunStore,
};
use gforge_llm::{BackendConfig, BackendKind, Gateway};
use gforge_service::{serve, ApiSession, DEFAULT_BIND};

#[derive(Debug, Parser)]
#[command(name = "gforge", version, about = "Guideline moderation for LLM disease-mention annotation")]
struct Cli {
    /// Log verbosity on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse PubTator files and check every mention against its text.
    Validate {
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
    },
    /// Annotate every document once and write the predictions as PubTator.
    Annotate(AnnotateArgs),
    /// Score prediction files against a gold corpus.
    Evaluate(EvaluateArgs),
    /// Create a moderation run and drive it until it completes or needs review.
    Run(RunArgs),
    /// Continue a run from its last persisted step.
    Resume {
        run_id: String,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Print a run's summary or its full record.
    Report {
        run_id: String,
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
    /// Record a review decision for a run awaiting review.
    Review(ReviewArgs),
    /// Serve the HTTP API (and optionally the built review console).
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct StoreArg {
    /// Directory holding run directories.
    #[arg(long, default_value = "runs")]
    store: PathBuf,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// live calls the endpoint, record also writes a cassette, replay reads one.
    #[arg(long, value_parser = parse_backend_kind)]
    backend: Option<BackendKind>,
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// OpenAI-compatible chat completions URL.
    #[arg(long)]
    endpoint: Option<String>,
}

impl BackendArgs {
    fn apply(&self, cfg: &mut BackendConfig) {
        if let Some(k) = self.backend {
            cfg.kind = k;
        }
        if let Some(c) = &self.cassette {
            cfg.cassette = Some(absolute(c));
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
    }
}

fn parse_backend_kind(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|_| format!("expected live, record or replay, got {s:?}"))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Guideline,
}

impl From<ModeArg> for PromptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => PromptMode::Baseline,
            ModeArg::Guideline => PromptMode::Guideline,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReviewArg {
    Auto,
    Hitl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableArg {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[arg(required = true)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    guideline: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Guideline)]
    mode: ModeArg,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("gold_source").required(true).args(["positional", "gold"]))]
struct EvaluateArgs {
    /// PRED GOLD: one prediction file and the gold corpus.
    #[arg(num_args = 2, value_names = ["PRED", "GOLD"])]
    positional: Vec<String>,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Prediction file, optionally named as NAME=PATH. Repeat to compare methods.
    #[arg(long = "pred")]
    preds: Vec<String>,
    #[arg(long, value_enum, default_value_t = TableArg::Text)]
    format: TableArg,
    /// Also print the per-category table.
    #[arg(long)]
    by_category: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration. Flags below override its values.
    config: Option<PathBuf>,
    /// Corpus files, replacing those of the config.
    #[arg(long = "corpus")]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    guideline: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    review: Option<ReviewArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    run_id: Option<String>,
    #[command(flatten)]
    store: StoreArg,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("decision").required(true).args(["approve", "reject", "edit"]))]
struct ReviewArgs {
    run_id: String,
    #[command(flatten)]
    store: StoreArg,
    /// Apply the moderator's proposed revision.
    #[arg(long)]
    approve: bool,
    /// Keep the current guideline.
    #[arg(long)]
    reject: bool,
    /// JSON file with your own edits: {"edits": [...], "rationale": "..."}.
    #[arg(long, value_name = "FILE")]
    edit: Option<PathBuf>,
    /// Iteration index being reviewed; makes a repeated submission harmless.
    #[arg(long)]
    iteration: Option<usize>,
    /// Record the decision without continuing the run.
    #[arg(long)]
    no_continue: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    store: StoreArg,
    #[arg(long, default_value = DEFAULT_BIND)]
    bind: SocketAddr,
    /// Refuse every mutating request.
    #[arg(long)]
    read_only: bool,
    /// Directory of built console assets served at /.
    #[arg(long)]
    assets: Option<PathBuf>,
    /// Do not drive runs in the background after a mutation.
    #[arg(long)]
    no_drive: bool,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Writes to stdout; a closed pipe (`gforge report ... | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_corpora(paths: &[PathBuf]) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for p in paths {
        let part = parse_pubtator(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
        corpus = corpus.merge(part).with_context(|| format!("merging {}", p.display()))?;
    }
    Ok(corpus)
}

fn validate(paths: &[PathBuf]) -> Result<ExitCode> {
    let corpus = load_corpora(paths)?;
    emit(&format!("{} documents, {} mentions\n", corpus.len(), corpus.mention_count()))?;
    Ok(ExitCode::SUCCESS)
}

fn annotate(args: &AnnotateArgs) -> Result<ExitCode> {
    let corpus = load_corpora(&args.corpus)?;
    let guideline = match (args.mode, &args.guideline) {
        (ModeArg::Baseline, _) => None,
        (ModeArg::Guideline, Some(p)) => Some(parse_guideline(&read(p)?)?),
        (ModeArg::Guideline, None) => bail!("--mode guideline needs --guideline"),
    };
    let templates = match &args.templates {
        Some(dir) => Templates::from_dir(dir)?,
        None => Templates::builtin(),
    };
    let mut backend = BackendConfig::default();
    args.backend.apply(&mut backend);
    let gateway = Gateway::from_config(&backend)?;
    let docs: Vec<_> = corpus.documents.iter().collect();
    let results = annotate_documents(&gateway, &PromptBuilder::new(templates), &docs, guideline.as_ref())?;

    let mut out = String::new();
    let mut warnings = 0;
    for doc in &corpus.documents {
        let parsed = &results[&doc.doc_id];
        warnings += parsed.warnings.len();
        for w in &parsed.warnings {
            tracing::warn!(doc = %doc.doc_id, item = %w.item, "{}", w.reason);
        }
        write_document(&mut out, doc, &parsed.annotations);
    }
    match &args.out {
        Some(p) => fs::write(p, out).with_context(|| format!("writing {}", p.display()))?,
        None => emit(&out)?,
    }
    if warnings > 0 {
        eprintln!("gforge: {warnings} annotator items were dropped (run with -v for details)");
    }
    Ok(ExitCode::SUCCESS)
}

fn load_predictions(gold: &Corpus, path: &Path) -> Result<BTreeMap<String, Vec<gforge_core::corpus::Annotation>>> {
    let pred = parse_pubtator(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let mut out = BTreeMap::new();
    for doc in &pred.documents {
        let Some(g) = gold.document(&doc.doc_id) else {
            bail!("{}: document {} is not in the gold corpus", path.display(), doc.doc_id);
        };
        if g.title != doc.title || g.abstract_text != doc.abstract_text {
            bail!("{}: text of document {} differs from the gold corpus", path.display(), doc.doc_id);
        }
        out.insert(doc.doc_id.clone(), pred.annotations(&doc.doc_id).to_vec());
    }
    Ok(out)
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<ExitCode> {
    let (gold_path, preds) = match (&args.gold, args.positional.as_slice()) {
        (Some(g), []) => (g.clone(), args.preds.clone()),
        (None, [pred, gold]) => {
            let mut preds = vec![pred.clone()];
            preds.extend(args.preds.iter().cloned());
            (PathBuf::from(gold), preds)
        }
        _ => bail!("give the gold corpus either as --gold or as the second positional argument"),
    };
    if preds.is_empty() {
        bail!("no prediction files given");
    }
    let gold = load_corpora(&[gold_path])?;
    let mut methods: Vec<(String, Evaluation)> = Vec::new();
    for spec in &preds {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        let preds = load_predictions(&gold, &path)?;
        methods.push((name, evaluate(&gold, &preds)?));
    }
    let refs: Vec<(&str, &Evaluation)> = methods.iter().map(|(n, e)| (n.as_str(), e)).collect();
    let table = match args.format {
        TableArg::Json => {
            let v: serde_json::Map<String, serde_json::Value> = methods
                .iter()
                .map(|(n, e)| {
                    let body = serde_json::json!({ "overall": e.overall, "per_category": e.per_category });
                    (n.clone(), body)
                })
                .collect();
            emit(&(serde_json::to_string_pretty(&v)? + "\n"))?;
            return Ok(ExitCode::SUCCESS);
        }
        TableArg::Text => TableFormat::Text,
        TableArg::Csv => TableFormat::Csv,
    };
    emit(&render_overall(&refs, table))?;
    if args.by_category {
        emit("\n")?;
        emit(&render_by_category(&refs, table))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !args.corpus.is_empty() {
        cfg.corpus = args.corpus.iter().map(|p| absolute(p)).collect();
    }
    if let Some(g) = &args.guideline {
        cfg.guideline = Some(absolute(g));
    }
    if let Some(m) = args.mode {
        cfg.prompt_mode = m.into();
    }
    if let Some(r) = args.review {
        cfg.review_mode = match r {
            ReviewArg::Auto => ReviewMode::Auto,
            ReviewArg::Hitl => ReviewMode::Hitl,
        };
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(t) = args.threshold {
        cfg.gate_threshold = t;
    }
    if let Some(m) = args.max_iterations {
        cfg.max_iterations_per_batch = m;
    }
    args.backend.apply(&mut cfg.backend);
    cfg.validate()?;
    Ok(cfg)
}

fn print_record(record: &RunRecord, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Text => emit(&summarize(record)),
        ReportFormat::Json => emit(&(serde_json::to_string_pretty(record)? + "\n")),
    }
}

fn finish(store: &RunStore, run_id: &str, format: ReportFormat) -> Result<ExitCode> {
    let record = store.record(run_id)?;
    print_record(&record, format)?;
    match record.status {
        RunStatus::Failed => {
            eprintln!(
                "gforge: run {run_id} failed: {}",
                record.error.as_deref().unwrap_or("unknown error")
            );
            Ok(ExitCode::from(1))
        }
        RunStatus::AwaitingReview => {
            eprintln!("gforge: run {run_id} is waiting for review (gforge review {run_id} --approve|--reject|--edit FILE)");
            Ok(ExitCode::SUCCESS)
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn drive(store: &RunStore, run_id: &str) -> Result<()> {
    match Engine::new(store.clone()).drive(run_id) {
        Ok(_) => Ok(()),
        // The failure is persisted on the run and reported by `finish`.
        Err(e) if store.read_state(run_id).is_ok_and(|s| s.status == RunStatus::Failed) => {
            tracing::debug!(error = %e, "run failed");
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

fn run_cmd(args: &RunArgs) -> Result<ExitCode> {
    let cfg = run_config(args)?;
    let store = RunStore::new(&args.store.store);
    let run_id = Engine::new(store.clone()).create_run(cfg, args.run_id.clone())?;
    eprintln!("gforge: created run {run_id} in {}", store.root().display());
    drive(&store, &run_id)?;
    finish(&store, &run_id, args.format)
}

fn review_cmd(args: &ReviewArgs) -> Result<ExitCode> {
    let decision = if args.approve {
        ReviewDecision::Approve
    } else if args.reject {
        ReviewDecision::Reject
    } else {
        let path = args.edit.as_ref().expect("clap enforces one decision");
        #[derive(serde::Deserialize)]
        struct EditFile {
            edits: Vec<Edit>,
            #[serde(default)]
            rationale: String,
        }
        let f: EditFile =
            serde_json::from_str(&read(path)?).with_context(|| format!("parsing edits in {}", path.display()))?;
        ReviewDecision::Edit {
            edits: f.edits,
            rationale: f.rationale,
        }
    };
    let store = RunStore::new(&args.store.store);
    let resp = Engine::new(store.clone()).apply_review(
        &args.run_id,
        &ReviewRequest {
            iteration: args.iteration,
            decision,
        },
    )?;
    eprintln!(
        "gforge: iteration {} {}: {}",
        resp.iteration,
        if resp.duplicate { "was already reviewed" } else { "reviewed" },
        serde_json::to_string(&resp.outcome)?
    );
    if args.no_continue {
        return Ok(ExitCode::SUCCESS);
    }
    drive(&store, &args.run_id)?;
    finish(&store, &args.run_id, ReportFormat::Text)
}

fn serve_cmd(args: &ServeArgs) -> Result<ExitCode> {
    let mut session = ApiSession::new(&args.store.store);
    session.bind = args.bind;
    session.read_only = args.read_only;
    session.assets = args.assets.clone();
    session.drive = !args.no_drive;
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    eprintln!("gforge: serving {} on http://{}", session.store_root.display(), session.bind);
    rt.block_on(serve(session)).with_context(|| format!("serving on {}", args.bind))?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { corpus } => validate(&corpus),
        Command::Annotate(a) => annotate(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Run(a) => run_cmd(&a),
        Command::Resume { run_id, store } => {
            let store = RunStore::new(&store.store);
            drive(&store, &run_id)?;
            finish(&store, &run_id, ReportFormat::Text)
        }
        Command::Report { run_id, store, format } => {
            let store = RunStore::new(&store.store);
            print_record(&store.record(&run_id)?, format)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Review(a) => review_cmd(&a),
        Command::Serve(a) => serve_cmd(&a),
    }
}

fn init_logging(verbose: u8) {
    use tracing_subscriber::EnvFilter;
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gforge: error: {e:#}");
            ExitCode::from(1)
        }
    }
}
