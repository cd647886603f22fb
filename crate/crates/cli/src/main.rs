//! `cfa-rag`: ingest datasources, build an index, query, account and benchmark.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use cfa_rag::accounting::{compute_footprint, FactorDb, InventoryItem, Scope};
use cfa_rag::config::{BackendSpec, RunConfig};
use cfa_rag::corpus::{Catalog, IngestMetadata, SourceKind};
use cfa_rag::embedding::{train_dual_tower, Encoder, TrainingConfig, TrainingPair};
use cfa_rag::evaluation::{run_benchmark, MetricsReport};
use cfa_rag::generation::GenerationBackend;
use cfa_rag::http::RetryPolicy;
use cfa_rag::index::VectorIndex;
use cfa_rag::pipeline::{build_index, RetrievalContext, Stage};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cfa-rag", version, about = "Retrieval-augmented carbon footprint accounting")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add a datasource to the catalog.
    Ingest(IngestArgs),
    /// Vector index operations.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Train the toy dual-tower encoder on labelled pairs.
    TrainEncoder(TrainArgs),
    /// Retrieve fragments for a question and, with a backend, extract facts.
    Query(QueryArgs),
    /// Compute a footprint from an inventory and an emission factor table.
    Account(AccountArgs),
    /// Run a benchmark end to end and score it.
    Bench(BenchArgs),
    /// Print a saved benchmark report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["file", "url", "text"])))]
struct IngestArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    industry: Option<String>,
}

#[derive(Debug, Args)]
struct ChunkFlags {
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Chunk the catalog, embed every chunk and save the index.
    Build(IndexArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `lexical[:dims]`, `toy:PATH` or `remote:URL`.
    #[arg(long)]
    encoder: Option<String>,
    #[command(flatten)]
    chunking: ChunkFlags,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON array of `{text_a, text_b, related}`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Args)]
struct BackendFlags {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Scripted answers for the mock backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    audit_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(short, long)]
    k: Option<usize>,
    #[command(flatten)]
    chunking: ChunkFlags,
    #[command(flatten)]
    backend: BackendFlags,
    /// Read one question per line from stdin.
    #[arg(long, conflicts_with = "question")]
    interactive: bool,
    #[arg(required_unless_present = "interactive")]
    question: Option<String>,
}

#[derive(Debug, Args)]
struct AccountArgs {
    /// JSON array of `{activity, quantity, unit, lifecycle_stage}`.
    #[arg(long, visible_alias = "facts")]
    inventory: PathBuf,
    #[arg(long)]
    factors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cradle-to-gate")]
    scope: ScopeArg,
    #[arg(long, default_value = "t")]
    functional_unit: String,
    /// Print CSV rows instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    CradleToGate,
    CradleToGrave,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// Report path; `.csv` and `.facts.csv` siblings are written next to it.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(short, long)]
    k: Option<usize>,
    #[command(flatten)]
    chunking: ChunkFlags,
    #[command(flatten)]
    backend: BackendFlags,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Print the summary CSV instead of the text summary.
    #[arg(long, conflicts_with = "facts_csv")]
    csv: bool,
    #[arg(long)]
    facts_csv: bool,
}

/// A failure reported as `[stage] message`, exit code 1.
#[derive(Debug)]
struct Failure {
    stage: Stage,
    message: String,
}

trait OrFail<T> {
    fn or_fail(self, stage: Stage) -> Result<T, Failure>;
}

impl<T, E: std::fmt::Display> OrFail<T> for Result<T, E> {
    fn or_fail(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure { stage, message: e.to_string() })
    }
}

impl From<cfa_rag::pipeline::PipelineError> for Failure {
    fn from(e: cfa_rag::pipeline::PipelineError) -> Self {
        Failure { stage: e.stage, message: e.source.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: [{}] {}", f.stage, f.message);
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).or_fail(Stage::Config)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(cfg, a),
        Command::Index(IndexCommand::Build(a)) => {
            override_opt(&mut cfg.catalog, a.catalog);
            override_opt(&mut cfg.index, a.out);
            override_val(&mut cfg.encoder, a.encoder);
            apply_chunking(&mut cfg, &a.chunking);
            index(cfg)
        }
        Command::TrainEncoder(a) => train(a),
        Command::Query(a) => {
            override_opt(&mut cfg.catalog, a.catalog.clone());
            override_opt(&mut cfg.index, a.index.clone());
            override_val(&mut cfg.encoder, a.encoder.clone());
            override_val(&mut cfg.k, a.k);
            apply_chunking(&mut cfg, &a.chunking);
            apply_backend(&mut cfg, &a.backend)?;
            query(cfg, a)
        }
        Command::Account(a) => {
            override_opt(&mut cfg.factor_db, a.factors.clone());
            account(cfg, a)
        }
        Command::Bench(a) => {
            override_opt(&mut cfg.benchmark, a.benchmark);
            override_opt(&mut cfg.report_out, a.report_out);
            override_val(&mut cfg.encoder, a.encoder);
            override_val(&mut cfg.k, a.k);
            apply_chunking(&mut cfg, &a.chunking);
            apply_backend(&mut cfg, &a.backend)?;
            bench(cfg)
        }
        Command::Report(a) => report(a),
    }
}

fn override_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn override_val<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn apply_chunking(cfg: &mut RunConfig, flags: &ChunkFlags) {
    override_val(&mut cfg.chunk_size, flags.chunk_size);
    override_val(&mut cfg.overlap, flags.overlap);
}

fn apply_backend(cfg: &mut RunConfig, flags: &BackendFlags) -> Result<(), Failure> {
    override_opt(&mut cfg.audit_log, flags.audit_log.clone());
    let kind = flags.backend.or(match (&flags.script, &flags.endpoint) {
        (Some(_), _) => Some(BackendKind::Mock),
        (None, Some(_)) => Some(BackendKind::Remote),
        _ => None,
    });
    match kind {
        None => {}
        Some(BackendKind::Mock) => {
            let (script, fallback) = match &cfg.backend {
                BackendSpec::ScriptedMock { script, fallback } => (script.clone(), fallback.clone()),
                BackendSpec::Remote { .. } => (None, None),
            };
            cfg.backend = BackendSpec::ScriptedMock { script: flags.script.clone().or(script), fallback };
        }
        Some(BackendKind::Remote) => {
            let (endpoint, model, retry, max_in_flight) = match &cfg.backend {
                BackendSpec::Remote { endpoint, model, retry, max_in_flight } => {
                    (Some(endpoint.clone()), Some(model.clone()), *retry, *max_in_flight)
                }
                BackendSpec::ScriptedMock { .. } => (None, None, RetryPolicy::default(), 4),
            };
            let endpoint = flags.endpoint.clone().or(endpoint).ok_or_else(|| Failure {
                stage: Stage::Config,
                message: "remote backend needs --endpoint".into(),
            })?;
            let model = flags.model.clone().or(model).ok_or_else(|| Failure {
                stage: Stage::Config,
                message: "remote backend needs --model".into(),
            })?;
            cfg.backend = BackendSpec::Remote { endpoint, model, retry, max_in_flight };
        }
    }
    Ok(())
}

fn ingest(cfg: RunConfig, a: IngestArgs) -> Result<(), Failure> {
    let path = a.catalog.or(cfg.catalog).ok_or_else(|| Failure {
        stage: Stage::Config,
        message: "no catalog path (--catalog or config \"catalog\")".into(),
    })?;
    let mut catalog = Catalog::load_or_default(&path).or_fail(Stage::Ingest)?;
    let meta = IngestMetadata { title: a.title, industry_tag: a.industry };
    let doc = if let Some(file) = a.file {
        catalog.ingest_file(&file, meta)
    } else if let Some(url) = a.url {
        catalog.ingest(SourceKind::UrlFetch, url.as_bytes(), meta)
    } else {
        let text = a.text.unwrap_or_default();
        catalog.ingest(SourceKind::RawText, text.as_bytes(), meta)
    }
    .or_fail(Stage::Ingest)?;
    let line = format!("{}\t{} chars\t{}", doc.doc_id, doc.char_len(), doc.title);
    catalog.save(&path).or_fail(Stage::Ingest)?;
    println!("{line}");
    Ok(())
}

fn load_catalog(cfg: &RunConfig) -> Result<Catalog, Failure> {
    let path = cfg.existing("catalog", &cfg.catalog).or_fail(Stage::Config)?;
    Catalog::load(&path).or_fail(Stage::Ingest)
}

fn index(cfg: RunConfig) -> Result<(), Failure> {
    cfg.validate().or_fail(Stage::Config)?;
    let out = cfg.index.clone().ok_or_else(|| Failure {
        stage: Stage::Config,
        message: "no index path (--out or config \"index\")".into(),
    })?;
    let catalog = load_catalog(&cfg)?;
    let encoder = Encoder::from_spec(&cfg.encoder).or_fail(Stage::Config)?;
    let chunks = catalog.chunks(cfg.chunk_config()).or_fail(Stage::Segment)?;
    let index = build_index(&chunks, &encoder)?;
    index.save(&out).or_fail(Stage::Index)?;
    println!(
        "indexed {} chunks from {} documents ({encoder}, {} dims) -> {}",
        index.len(),
        catalog.len(),
        index.dims().unwrap_or(0),
        out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.pairs).or_fail(Stage::Config)?;
    let pairs: Vec<TrainingPair> = serde_json::from_str(&text)
        .map_err(|e| Failure { stage: Stage::Config, message: format!("{}: {e}", a.pairs.display()) })?;
    let mut tc = TrainingConfig::default();
    override_val(&mut tc.dims, a.dims);
    override_val(&mut tc.epochs, a.epochs);
    override_val(&mut tc.learning_rate, a.lr);
    override_val(&mut tc.margin, a.margin);
    override_val(&mut tc.seed, a.seed);
    let (encoder, report) = train_dual_tower(&pairs, &tc).or_fail(Stage::Embed)?;
    encoder.save(&a.out).or_fail(Stage::Embed)?;
    println!(
        "trained on {} pairs for {} epochs: loss {:.6} -> {:.6}; saved {}",
        pairs.len(),
        tc.epochs,
        report.initial_loss(),
        report.final_loss(),
        a.out.display()
    );
    Ok(())
}

/// A backend is only used when one was configured: a mock needs a script or fallback.
fn configured_backend(cfg: &RunConfig) -> Result<Option<GenerationBackend>, Failure> {
    match &cfg.backend {
        BackendSpec::ScriptedMock { script: None, fallback: None } => Ok(None),
        spec => spec.build(cfg.audit_log.as_deref()).map(Some).or_fail(Stage::Config),
    }
}

fn query(cfg: RunConfig, a: QueryArgs) -> Result<(), Failure> {
    cfg.validate().or_fail(Stage::Config)?;
    let catalog = load_catalog(&cfg)?;
    let encoder = Encoder::from_spec(&cfg.encoder).or_fail(Stage::Config)?;
    let chunks = catalog.chunks(cfg.chunk_config()).or_fail(Stage::Segment)?;
    let index = match &cfg.index {
        Some(p) => {
            cfa_rag::config::require_existing("index", p).or_fail(Stage::Config)?;
            VectorIndex::load(p).or_fail(Stage::Index)?
        }
        None => build_index(&chunks, &encoder)?,
    };
    let backend = configured_backend(&cfg)?;
    let ctx = RetrievalContext::from_index(index, chunks, encoder, cfg.k, cfg.prompt_budget);

    let stdout = io::stdout();
    let mut out = stdout.lock();
    if a.interactive {
        for line in io::stdin().lock().lines() {
            let line = line.or_fail(Stage::Config)?;
            if line.trim().is_empty() {
                continue;
            }
            if let Err(f) = answer_one(&ctx, &line, backend.as_ref(), &mut out) {
                eprintln!("error: [{}] {}", f.stage, f.message);
            }
        }
        Ok(())
    } else {
        answer_one(&ctx, a.question.as_deref().unwrap_or_default(), backend.as_ref(), &mut out)
    }
}

fn answer_one(
    ctx: &RetrievalContext,
    question: &str,
    backend: Option<&GenerationBackend>,
    out: &mut impl Write,
) -> Result<(), Failure> {
    let io_err = |e: io::Error| Failure { stage: Stage::Report, message: e.to_string() };
    let hits = match backend {
        Some(b) => {
            let outcome = ctx.answer(question, None, &[], b)?;
            print_hits(ctx, &outcome.hits, out).map_err(io_err)?;
            writeln!(out, "facts:").map_err(io_err)?;
            for f in &outcome.extraction.facts {
                writeln!(out, "  {} = {} {}  [{}]", f.fact_key, f.value, f.unit, f.provenance.join(", "))
                    .map_err(io_err)?;
            }
            for w in &outcome.extraction.warnings {
                writeln!(out, "  warning: {}", serde_json::to_string(w).unwrap_or_default()).map_err(io_err)?;
            }
            return Ok(());
        }
        None => ctx.retrieve(question)?,
    };
    print_hits(ctx, &hits, out).map_err(io_err)
}

fn print_hits(ctx: &RetrievalContext, hits: &[cfa_rag::index::RetrievalHit], out: &mut impl Write) -> io::Result<()> {
    for h in hits {
        let text = ctx.chunk(&h.chunk_id).map(|c| c.text.as_str()).unwrap_or("");
        let preview: String = text.chars().take(160).collect::<String>().replace('\n', " ");
        writeln!(out, "{}. {} ({:.4})  {preview}", h.rank, h.chunk_id, h.similarity)?;
    }
    Ok(())
}

fn account(cfg: RunConfig, a: AccountArgs) -> Result<(), Failure> {
    let factors_path = cfg.existing("factor table", &cfg.factor_db).or_fail(Stage::Config)?;
    let factors = FactorDb::load(&factors_path).or_fail(Stage::Config)?;
    let text = fs::read_to_string(&a.inventory).or_fail(Stage::Config)?;
    let items: Vec<InventoryItem> = serde_json::from_str(&text)
        .map_err(|e| Failure { stage: Stage::Config, message: format!("{}: {e}", a.inventory.display()) })?;
    let scope = match a.scope {
        ScopeArg::CradleToGate => Scope::CradleToGate,
        ScopeArg::CradleToGrave => Scope::CradleToGrave,
    };
    let result = compute_footprint(&items, &factors, scope, &a.functional_unit).or_fail(Stage::Account)?;
    if a.csv {
        print!("{}", result.to_csv());
    } else {
        println!("{}", result.to_json());
    }
    Ok(())
}

fn bench(cfg: RunConfig) -> Result<(), Failure> {
    let bench_path = cfg.existing("benchmark", &cfg.benchmark).or_fail(Stage::Config)?;
    let report = run_benchmark(&cfg, &bench_path).map_err(|e| {
        for line in &e.log {
            log::info!("{line}");
        }
        Failure { stage: e.stage, message: e.message }
    })?;
    print!("{}", report.summary());
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if let Some(out) = &cfg.report_out {
        report.write(out).or_fail(Stage::Report)?;
        println!("report: {}", out.display());
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.input).or_fail(Stage::Report)?;
    let report: MetricsReport = serde_json::from_str(&text)
        .map_err(|e| Failure { stage: Stage::Report, message: format!("{}: {e}", a.input.display()) })?;
    if a.csv {
        print!("{}", report.to_summary_csv());
    } else if a.facts_csv {
        print!("{}", report.to_per_fact_csv());
    } else {
        print!("{}", report.summary());
    }
    Ok(())
}
