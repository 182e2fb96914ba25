//! `manurag`: ingest a corpus, build indexes, answer questions and run the
//! benchmark sweep.
//!
//! Exit codes: 1 usage, 2 corpus, 3 provider, 4 stale index, 5 bench threshold.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use manurag::bench::{self, BenchError, BenchRun, ReportFormat};
use manurag::config::{ConfigError, FIELDS};
use manurag::corpus::{load_corpus, Corpus};
use manurag::pipelines::{self, BuildManifest, IndexSet, PipelineError, PipelineVariant};
use manurag::{QuestionType, RunConfig};

const REPORT_MD: &str = "report.md";
const REPORT_CSV: &str = "report.csv";
const RUNS_JSON: &str = "runs.json";
const RUN_CONFIG: &str = "run.conf";

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(m: impl Display) -> Self {
        Self { code: 1, message: m.to_string() }
    }
    fn corpus(m: impl Display) -> Self {
        Self { code: 2, message: m.to_string() }
    }
    fn provider(m: impl Display) -> Self {
        Self { code: 3, message: m.to_string() }
    }
    fn stale(m: impl Display) -> Self {
        Self { code: 4, message: m.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Provider(_) => Failure::provider(e),
            _ => Failure::usage(e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Corpus(_) | PipelineError::NothingToIndex => Failure::corpus(e),
            PipelineError::Provider { .. } => Failure::provider(e),
            PipelineError::Store(_) | PipelineError::VariantMismatch { .. } | PipelineError::Manifest(_) => {
                Failure::stale(e)
            }
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Pipeline(p) => p.into(),
            other => Failure::usage(other),
        }
    }
}

fn cli() -> Command {
    let mut cmd = Command::new("manurag")
        .about("Multi-modal retrieval-augmented QA over manufacturing documents")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help("Exit codes: 1 usage, 2 corpus, 3 provider, 4 stale index, 5 bench threshold.")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("plain-text `key = value` config file; flags override it"),
        )
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("log progress to stderr"),
        );
    for (key, help) in FIELDS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .global(true)
                .help(*help),
        );
    }
    cmd.subcommand(Command::new("ingest").about("Validate the corpus and print document, asset and orphan counts"))
        .subcommand(Command::new("index").about("Build and persist the index for one variant under <output>/index"))
        .subcommand(
            Command::new("query")
                .about("Answer one question from a persisted index")
                .arg(Arg::new("question").required(true).help("question text"))
                .arg(
                    Arg::new("qtype")
                        .long("qtype")
                        .value_parser(["mathq", "mcq", "rq"])
                        .default_value("rq")
                        .help("question type selecting the prompt template"),
                )
                .arg(
                    Arg::new("json")
                        .long("json")
                        .action(ArgAction::SetTrue)
                        .help("print the full answer record as JSON"),
                ),
        )
        .subcommand(Command::new("bench").about("Run every configured dataset against every configured variant"))
        .subcommand(
            Command::new("report")
                .about("Render report tables from a saved runs.json")
                .arg(
                    Arg::new("runs")
                        .long("runs")
                        .value_name("FILE")
                        .help("runs file (default <output>/runs.json)"),
                )
                .arg(
                    Arg::new("format")
                        .long("format")
                        .value_parser(["markdown", "csv"])
                        .default_value("markdown"),
                ),
        )
}

fn resolve_config(m: &ArgMatches) -> Result<RunConfig, Failure> {
    let flags: Vec<(&str, &str)> = FIELDS
        .iter()
        .filter_map(|(key, _)| m.get_one::<String>(key).map(|v| (*key, v.as_str())))
        .collect();
    let file = m.get_one::<String>("config").map(PathBuf::from);
    Ok(RunConfig::resolve(file.as_deref(), flags)?)
}

fn single_variant(cfg: &RunConfig) -> Result<PipelineVariant, Failure> {
    match cfg.variants.as_slice() {
        [v] => Ok(*v),
        _ => Err(Failure::usage("this command needs exactly one --variant")),
    }
}

fn load(cfg: &RunConfig) -> Result<Corpus, Failure> {
    load_corpus(&cfg.corpus).map_err(Failure::corpus)
}

fn cmd_ingest(cfg: &RunConfig) -> Result<(), Failure> {
    let corpus = load(cfg)?;
    println!("documents: {}", corpus.documents.len());
    println!("assets: {}", corpus.asset_count());
    let orphans = corpus.orphans();
    println!("orphans: {}", orphans.len());
    for u in orphans {
        println!("  orphan {u}");
    }
    Ok(())
}

fn cmd_index(cfg: &RunConfig) -> Result<(), Failure> {
    let variant = single_variant(cfg)?;
    let params = cfg.chunking().map_err(Failure::usage)?;
    let corpus = load(cfg)?;
    let (providers, cache) = cfg.build_providers()?;
    let index = pipelines::build_index(&corpus, variant, params, &providers)?;
    let hash = pipelines::corpus_hash(&corpus).map_err(Failure::corpus)?;
    let manifest = BuildManifest::describe(&index, &providers, hash);

    let target = cfg.index_dir();
    let staging = cfg.output.join(format!("index.partial-{}", std::process::id()));
    let _ = fs::remove_dir_all(&staging);
    if let Err(e) = index.save(&staging, &manifest) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e.into());
    }
    if target.exists() {
        fs::remove_dir_all(&target).map_err(|e| Failure::usage(format!("{}: {e}", target.display())))?;
    }
    fs::rename(&staging, &target).map_err(|e| Failure::usage(format!("{}: {e}", target.display())))?;

    println!("variant: {}", variant.label());
    println!("text entries: {}", manifest.text_entries);
    if let Some(n) = manifest.image_entries {
        println!("image entries: {n}");
    }
    println!("describe cache: hits {}, misses {}", cache.hits(), cache.misses());
    println!("index: {}", target.display());
    Ok(())
}

fn cmd_query(cfg: &RunConfig, m: &ArgMatches) -> Result<(), Failure> {
    let question = m.get_one::<String>("question").expect("required");
    let qtype: QuestionType = m
        .get_one::<String>("qtype")
        .expect("defaulted")
        .parse()
        .map_err(Failure::usage)?;
    let variant = single_variant(cfg)?;
    let params = cfg.chunking().map_err(Failure::usage)?;
    let corpus = load(cfg)?;
    let (providers, _) = cfg.build_providers()?;

    let dir = cfg.index_dir();
    let built = pipelines::read_manifest(&dir).map_err(|e| Failure::stale(format!("{e}; run `manurag index` first")))?;
    let hash = pipelines::corpus_hash(&corpus).map_err(Failure::corpus)?;
    let expected = BuildManifest::expected(variant, params, &providers, hash);
    let stale = built.mismatches(&expected);
    if !stale.is_empty() {
        return Err(Failure::stale(format!(
            "index at {} is stale (differs in: {}); rebuild with `manurag index`",
            dir.display(),
            stale.join(", ")
        )));
    }
    let (index, _) = IndexSet::load(&dir)?;
    let templates = cfg.prompt_templates().map_err(Failure::usage)?;
    let answer = pipelines::answer(question, qtype, &corpus, &index, cfg.k, &providers, &templates)?;

    if m.get_flag("json") {
        println!("{}", serde_json::to_string_pretty(&answer).expect("answer serialises"));
        return Ok(());
    }
    println!("{}", answer.text);
    println!();
    for hit in &answer.bundle.text_hits {
        println!("chunk {} score {:.4}", hit.chunk_id, hit.score);
    }
    for uuid in answer.bundle.presented_images() {
        println!("image {uuid}");
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn cmd_bench(cfg: &RunConfig) -> Result<(), Failure> {
    if QuestionType::ALL.iter().all(|q| cfg.dataset_path(*q).is_none()) {
        return Err(Failure::usage("no dataset configured; set --mathq, --mcq or --rq"));
    }
    let datasets = cfg.datasets()?;
    let corpus = load(cfg)?;
    let (providers, _) = cfg.build_providers()?;
    let templates = cfg.prompt_templates().map_err(Failure::usage)?;
    let base = cfg.bench_config(cfg.variants[0], providers.model_names());
    let runs = bench::sweep(&corpus, &datasets, &cfg.variants, &base, &providers, &templates)?;

    fs::create_dir_all(&cfg.output).map_err(|e| Failure::usage(format!("{}: {e}", cfg.output.display())))?;
    let markdown = bench::render_report(&runs, ReportFormat::Markdown)?;
    write(&cfg.output.join(REPORT_MD), &markdown)?;
    write(&cfg.output.join(REPORT_CSV), &bench::render_report(&runs, ReportFormat::Csv)?)?;
    write(
        &cfg.output.join(RUNS_JSON),
        &(serde_json::to_string_pretty(&runs).expect("runs serialise") + "\n"),
    )?;
    write(&cfg.output.join(RUN_CONFIG), &cfg.to_kv_text())?;
    print!("{markdown}");

    let worst = runs.iter().max_by(|a, b| a.error_rate().total_cmp(&b.error_rate()));
    if let Some(run) = worst.filter(|r| r.error_rate() > cfg.error_threshold) {
        return Err(Failure {
            code: 5,
            message: format!(
                "{} on {}: {} of {} rows failed ({:.1}% > {:.1}% threshold); first error: {}",
                run.config.variant.label(),
                run.qtype.label(),
                run.errors.len(),
                run.dataset_size(),
                run.error_rate() * 100.0,
                cfg.error_threshold * 100.0,
                run.errors.first().map(|e| e.message.as_str()).unwrap_or("")
            ),
        });
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig, m: &ArgMatches) -> Result<(), Failure> {
    let path = m
        .get_one::<String>("runs")
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output.join(RUNS_JSON));
    let text = fs::read_to_string(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let runs: Vec<BenchRun> =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let format = match m.get_one::<String>("format").map(String::as_str) {
        Some("csv") => ReportFormat::Csv,
        _ => ReportFormat::Markdown,
    };
    print!("{}", bench::render_report(&runs, format)?);
    Ok(())
}

fn run(m: &ArgMatches) -> Result<(), Failure> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = resolve_config(sub)?;
    tracing::info!(config = %cfg.to_kv_text().replace('\n', "; "), "resolved configuration");
    match name {
        "ingest" => cmd_ingest(&cfg),
        "index" => cmd_index(&cfg),
        "query" => cmd_query(&cfg, sub),
        "bench" => cmd_bench(&cfg),
        "report" => cmd_report(&cfg, sub),
        other => Err(Failure::usage(format!("unknown command {other}"))),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let verbose = matches
        .subcommand()
        .map(|(_, s)| s.get_flag("verbose"))
        .unwrap_or(false);
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if verbose { tracing::Level::INFO } else { tracing::Level::WARN })
        .init();

    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
