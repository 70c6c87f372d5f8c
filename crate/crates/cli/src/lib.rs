//! Command-line front end: each subcommand maps onto one pipeline stage
//! and writes the artifact formats of the module that owns it.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use strata::annotator::{run_annotation, AnnotationBatch, AnnotatorError};
use strata::corpus::{cluster_corpus, default_k, load_corpus, CorpusError};
use strata::eval::{bench_pipeline, evaluate_store, BenchConfig, EvalError, GroundTruth, BENCH_SELECTION};
use strata::index::{build_store, AnnotationStore, OpenOptions, StoreError, FORMAT_VERSION};
use strata::schema::{Schema, SchemaParseError};
use strata::schemaboot::{induce, QualityWeights, SchemabootError};
use strata::ssr::{bind_nl_query, parse_script, run_script, LatencyProfile, ScriptOutput, SsrError, DEFAULT_TAU_BIND};
use strata::synth::planted_corpus;

pub use config::{Config, OutputFormat};

/// Exit code for command-line usage errors.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Query(#[from] SsrError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error(transparent)]
    Schemaboot(#[from] SchemabootError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("schema: {0}")]
    Schema(#[from] SchemaParseError),
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_owned(), source }
    }

    /// 0 ok, 2 query syntax, 3 query semantics, 4 runtime, 64 usage.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Query(e) => e.exit_code(),
            _ => 4,
        }
    }
}

pub fn version_string() -> String {
    format!("strata {} (store format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Parser)]
#[command(name = "strata", about = "Annotation-driven structured retrieval over text corpora", disable_version_flag = true)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print version and store format version.
    #[arg(long)]
    pub version: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSON Lines corpus and print its fingerprint.
    Ingest(IngestArgs),
    /// Cluster a corpus with k-means over text embeddings.
    Cluster(ClusterArgs),
    /// Induce a schema: writes schema.json, front.json and quality.json.
    Induce(InduceArgs),
    /// Annotate a corpus against a schema.
    Annotate(AnnotateArgs),
    /// Build and persist the annotation store.
    Index(IndexArgs),
    /// Run one query against a store.
    Query(QueryArgs),
    /// Run a multi-statement script file against a store.
    Script(ScriptArgs),
    /// Draft a query from natural language against a store's schema.
    BindNl(BindNlArgs),
    /// Score an existing store against gold files.
    Eval(EvalArgs),
    /// Run the whole pipeline on a corpus and score it against gold files.
    Bench(BenchArgs),
    /// Write a planted synthetic corpus with gold files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Write the corpus back in canonical form.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Output file for the cluster assignment.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InduceArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Quality weights alpha,beta,gamma,delta.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<QualityWeights>,
    /// File with one historical query per line.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub schema: PathBuf,
    /// Output annotations file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Store directory to write.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Build time recorded in the manifest.
    #[arg(long, default_value = "")]
    pub built_at: String,
}

#[derive(Debug, Args)]
pub struct ReadArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Corpus the store was built from; needed by EXTRACT predicates.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Print the plan of every statement.
    #[arg(long)]
    pub explain: bool,
    /// Print the latency profile as JSON.
    #[arg(long)]
    pub profile: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub read: ReadArgs,
    pub query: String,
}

#[derive(Debug, Args)]
pub struct ScriptArgs {
    #[command(flatten)]
    pub read: ReadArgs,
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct BindNlArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Bind against a schema file instead of a store.
    #[arg(long, conflicts_with = "store")]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU_BIND)]
    pub tau: f64,
    pub text: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Output directory for schema.json, store/ and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for corpus.jsonl and gold/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
}

fn parse_weights(s: &str) -> Result<QualityWeights, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [a, b, c, d] = v[..] else { return Err(format!("expected 4 weights, got {}", v.len())) };
    QualityWeights::new(a, b, c, d).map_err(|e| e.to_string())
}

fn need(flag: Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.clone()).ok_or_else(|| CliError::Usage(format!("missing --{name} (or paths.{name} in the config)")))
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn read_schema(path: &Path) -> Result<Schema, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Schema::from_json(&text)?)
}

fn open_store(dir: &Path, corpus: Option<PathBuf>) -> Result<AnnotationStore, CliError> {
    Ok(AnnotationStore::open(dir, &OpenOptions { corpus, strict: false })?)
}

pub fn cmd_ingest(cfg: &Config, args: IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let path = need(args.corpus, &cfg.paths.corpus, "corpus")?;
    let corpus = load_corpus(&path)?;
    writeln!(out, "{} documents, {} bytes of text", corpus.len(), corpus.total_text_bytes()).map_err(out_err)?;
    writeln!(out, "sha256 {}", corpus.fingerprint()).map_err(out_err)?;
    if let Some(dest) = args.out {
        write_file(&dest, &corpus.to_jsonl())?;
    }
    Ok(())
}

pub fn cmd_cluster(cfg: &Config, args: ClusterArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&need(args.corpus, &cfg.paths.corpus, "corpus")?)?;
    let k = args.k.or(cfg.schemaboot.k).unwrap_or_else(|| default_k(corpus.len()));
    let c = cluster_corpus(&corpus, k, cfg.seed, cfg.schemaboot.kmeans)?;
    writeln!(out, "k = {} after {} iterations, inertia {:.6}", c.k, c.iterations, c.inertia).map_err(out_err)?;
    for (j, size) in c.cluster_sizes().iter().enumerate() {
        writeln!(out, "cluster {j}: {size} documents").map_err(out_err)?;
    }
    if let Some(dest) = args.out {
        let assignment: serde_json::Map<String, serde_json::Value> =
            c.doc_ids.iter().zip(&c.labels).map(|(d, l)| (d.clone(), json!(l))).collect();
        write_file(&dest, &to_json(&json!({ "k": c.k, "inertia": c.inertia, "labels": assignment })))?;
    }
    Ok(())
}

pub fn cmd_induce(cfg: &Config, args: InduceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&need(args.corpus, &cfg.paths.corpus, "corpus")?)?;
    let dir = need(args.out, &cfg.paths.out, "out")?;
    let mut ic = cfg.induce_config();
    if let Some(w) = args.weights {
        ic.weights = w;
    }
    if let Some(h) = args.history {
        let text = fs::read_to_string(&h).map_err(|e| CliError::io(&h, e))?;
        ic.query_history = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let ind = induce(&corpus, &cfg.annotator, &ic)?;
    write_file(&dir.join("schema.json"), &ind.schema.to_canonical_json())?;
    write_file(&dir.join("front.json"), &to_json(&ind.front))?;
    write_file(&dir.join("quality.json"), &to_json(&ind.report))?;
    let r = &ind.report;
    writeln!(out, "schema {} ({:?}, {} fields)", ind.schema.schema_id, ind.schema.granularity, ind.schema.fields.len())
        .map_err(out_err)?;
    for f in &ind.schema.fields {
        writeln!(out, "  {:<24} {:<12} {}", f.name, f.value_type.as_str(), f.tier.as_str()).map_err(out_err)?;
    }
    writeln!(
        out,
        "Q = {:.4}  cov {:.4}  disc {:.4}  cons {:.4}  match {:.4}",
        r.q, r.cov, r.disc, r.cons, r.match_
    )
    .map_err(out_err)?;
    writeln!(
        out,
        "t_annot {:.6} s/doc (measured {:.6})  size ratio {:.4}  front {} members",
        r.t_annot_mean_seconds,
        ind.measured_t_annot_seconds,
        r.store_size_ratio,
        ind.front.members.len()
    )
    .map_err(out_err)?;
    Ok(())
}

pub fn cmd_annotate(cfg: &Config, args: AnnotateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&need(args.corpus, &cfg.paths.corpus, "corpus")?)?;
    let schema = read_schema(&args.schema)?;
    let batch = run_annotation(&corpus, &schema, &cfg.annotator, cfg.jobs())?;
    let mut text = batch.to_json();
    text.push('\n');
    write_file(&args.out, &text)?;
    writeln!(out, "{} records, {} failures", batch.records.len(), batch.failures.len()).map_err(out_err)?;
    Ok(())
}

pub fn cmd_index(cfg: &Config, args: IndexArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&need(args.corpus, &cfg.paths.corpus, "corpus")?)?;
    let dir = need(args.store, &cfg.paths.store, "store")?;
    let schema = read_schema(&args.schema)?;
    let text = fs::read_to_string(&args.annotations).map_err(|e| CliError::io(&args.annotations, e))?;
    let batch: AnnotationBatch = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse { path: args.annotations.clone(), detail: e.to_string() })?;
    let store = build_store(&batch, &schema, &corpus, &args.built_at)?;
    store.persist(&dir)?;
    let fp = store.footprint();
    writeln!(out, "{} documents, {} bytes on disk", store.len(), fp.total()).map_err(out_err)?;
    Ok(())
}

fn profile_json(p: &LatencyProfile) -> serde_json::Value {
    json!({
        "n": p.candidate_count,
        "extract_invocations": p.extract_invocations,
        "l_index_seconds": p.l_index_seconds,
        "l_extract_total_seconds": p.l_extract_total_seconds,
        "total_seconds": p.total_seconds,
    })
}

fn report_run(cfg: &Config, read: &ReadArgs, result: &ScriptOutput, out: &mut dyn Write) -> Result<(), CliError> {
    if read.explain {
        for r in &result.runs {
            writeln!(out, "-- {}\n{}", r.label, r.explain.trim_end()).map_err(out_err)?;
            for w in &r.warnings {
                writeln!(out, "-- warning: {w}").map_err(out_err)?;
            }
        }
    }
    match read.format.unwrap_or(cfg.query.format) {
        OutputFormat::Csv => write!(out, "{}", result.table.to_csv()),
        OutputFormat::Json => writeln!(out, "{}", result.table.to_json()),
    }
    .map_err(out_err)?;
    if read.profile {
        let value = if let [one] = &result.runs[..] {
            profile_json(&one.profile)
        } else {
            json!(result.runs.iter().map(|r| json!({"label": r.label, "profile": profile_json(&r.profile)})).collect::<Vec<_>>())
        };
        writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json")).map_err(out_err)?;
    }
    Ok(())
}

fn run_text(cfg: &Config, read: &ReadArgs, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let script = parse_script(text)?;
    let dir = need(read.store.clone(), &cfg.paths.store, "store")?;
    let store = open_store(&dir, read.corpus.clone().or_else(|| cfg.paths.corpus.clone()))?;
    let result = run_script(&script, &store)?;
    report_run(cfg, read, &result, out)
}

pub fn cmd_query(cfg: &Config, args: QueryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    run_text(cfg, &args.read, &args.query, out)
}

pub fn cmd_script(cfg: &Config, args: ScriptArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.file).map_err(|e| CliError::io(&args.file, e))?;
    run_text(cfg, &args.read, &text, out)
}

pub fn cmd_bind_nl(cfg: &Config, args: BindNlArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let schema = match args.schema {
        Some(p) => read_schema(&p)?,
        None => open_store(&need(args.store, &cfg.paths.store, "store")?, None)?.schema().clone(),
    };
    let draft = bind_nl_query(&args.text, &schema, args.tau);
    writeln!(out, "{}", draft.dialect()).map_err(out_err)?;
    for b in &draft.bound {
        writeln!(out, "-- bound {:?} -> {}", b.span, serde_json::to_string(b).expect("json")).map_err(out_err)?;
    }
    for u in &draft.unbound {
        writeln!(out, "-- unbound {u:?}").map_err(out_err)?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &Config, args: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = need(args.store, &cfg.paths.store, "store")?;
    let gold = GroundTruth::load(&need(args.gold, &cfg.paths.gold, "gold")?)?;
    let store = open_store(&dir, args.corpus.or_else(|| cfg.paths.corpus.clone()))?;
    let report = evaluate_store(&store, &gold, store.warnings.clone());
    write!(out, "{}", report.render_table()).map_err(out_err)?;
    if let Some(dest) = args.out {
        write_file(&dest, &report.to_json())?;
    }
    Ok(())
}

/// Benchmark settings from the config: its induction block with the
/// benchmark's quality-only selection.
pub fn bench_config(cfg: &Config) -> BenchConfig {
    let mut induce = cfg.induce_config();
    induce.selection = BENCH_SELECTION;
    BenchConfig { induce, registry: cfg.annotator.clone(), jobs: cfg.jobs(), ..BenchConfig::default() }
}

pub fn cmd_bench(cfg: &Config, args: BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&need(args.corpus, &cfg.paths.corpus, "corpus")?)?;
    let gold = GroundTruth::load(&need(args.gold, &cfg.paths.gold, "gold")?)?;
    let dir = need(args.out, &cfg.paths.out, "out")?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let started = Instant::now();
    let run = bench_pipeline(&corpus, &gold, &bench_config(cfg))?;
    write_file(&dir.join("schema.json"), &run.induction.schema.to_canonical_json())?;
    run.store.persist(&dir.join("store"))?;
    write_file(&dir.join("report.json"), &run.report.to_json())?;
    write_file(&dir.join("timing.json"), &to_json(&run.timing))?;
    write!(out, "{}", run.report.render_table()).map_err(out_err)?;
    writeln!(out, "total {:.3} s", started.elapsed().as_secs_f64()).map_err(out_err)?;
    Ok(())
}

pub fn cmd_synth(cfg: &Config, args: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let planted = planted_corpus(cfg.seed, args.docs);
    write_file(&args.out.join("corpus.jsonl"), &planted.corpus.to_jsonl())?;
    planted.gold.save(&args.out.join("gold"))?;
    writeln!(out, "{} documents, {} gold queries", planted.corpus.len(), planted.gold.queries.len()).map_err(out_err)?;
    Ok(())
}

/// Apply the config file and global flags, then run the subcommand.
pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if cli.version {
        writeln!(out, "{}", version_string()).map_err(out_err)?;
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given; see --help".into()));
    };
    match command {
        Command::Ingest(a) => cmd_ingest(&cfg, a, out),
        Command::Cluster(a) => cmd_cluster(&cfg, a, out),
        Command::Induce(a) => cmd_induce(&cfg, a, out),
        Command::Annotate(a) => cmd_annotate(&cfg, a, out),
        Command::Index(a) => cmd_index(&cfg, a, out),
        Command::Query(a) => cmd_query(&cfg, a, out),
        Command::Script(a) => cmd_script(&cfg, a, out),
        Command::BindNl(a) => cmd_bind_nl(&cfg, a, out),
        Command::Eval(a) => cmd_eval(&cfg, a, out),
        Command::Bench(a) => cmd_bench(&cfg, a, out),
        Command::Synth(a) => cmd_synth(&cfg, a, out),
    }
}

/// Parse `argv` and run; returns the process exit code. Errors go to `err`.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => EXIT_USAGE,
            };
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
