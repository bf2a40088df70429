//! `logbench query | score | report`. Only `query` touches the network; `score` and
//! `report` work from files under the output directory:
//!
//! ```text
//! <out>/cache/<provider>__<mode>.jsonl       raw responses (append-only)
//! <out>/scores/<provider>__<mode>.csv        one ScoreRow per record, metadata header
//! <out>/extraction/<provider>__<mode>.json   extraction-class summary
//! <out>/review/<provider>__<mode>.csv        responses that need a human look
//! <out>/report/                              report.json and text tables
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, AnalysisError, FullReport};
use crate::corpus::{load_corpus, load_manifest, Corpus, CorpusError};
use crate::extraction::{self, ExtractionClass, Extractor, ReviewError, TemplateCandidate};
use crate::llm_client::{self, CacheError, Client, ClientError, ProviderConfig, ResponseCache};
use crate::metrics::{self, ScoreRow};
use crate::normalization::{load_rules, RuleError, RuleSet};
use crate::prompting::{load_prompt_spec, render_prompt, PromptError, PromptMode, PromptSpec, RenderedPrompt};
use crate::ConfigId;

#[derive(Debug, Parser)]
#[command(name = "logbench", version, about = "Benchmark LLMs as log parsers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Send one prompt per corpus message to a provider and cache the responses.
    Query(QueryArgs),
    /// Extract, normalize and score cached responses against the ground truth.
    Score(ScoreArgs),
    /// Aggregate every score file, rank configurations and correlate rankings.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Directory of per-project CSV files with Content and EventTemplate columns.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Expected per-project record counts (TOML with a [counts] table).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Prompt configuration; the bundled few-shot prompt when omitted.
    #[arg(long)]
    pub prompt_spec: Option<PathBuf>,
    /// Provider configuration (TOML).
    #[arg(long)]
    pub provider: PathBuf,
    /// Overrides the mode in the prompt configuration.
    #[arg(long, value_parser = ["zero", "few"])]
    pub mode: Option<String>,
    /// Output directory; caches, scores and reports go in subdirectories
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Continue into an existing cache, skipping prompts already answered.
    #[arg(long)]
    pub resume: bool,
    /// Overrides the provider's limit on requests in flight
    #[arg(long)]
    pub max_concurrency: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Normalization rules; the bundled rule set when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Edited review file whose templates replace the extracted ones.
    #[arg(long)]
    pub apply_reviews: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory holding the `scores/` files; the report goes to `report/`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Batch(#[from] llm_client::BatchError),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {0} already holds responses; pass --resume to continue it")]
    CacheExists(PathBuf),
    #[error("no cached responses in {0}; run `logbench query` first")]
    EmptyCache(PathBuf),
    #[error("no score files in {0}; run `logbench score` first")]
    NoScores(PathBuf),
    #[error("score files come from different corpora: {first} ({first_hash}) vs {other} ({other_hash})")]
    MixedCorpora {
        first: PathBuf,
        first_hash: String,
        other: PathBuf,
        other_hash: String,
    },
}

impl CliError {
    /// Process exit code for the error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Client(_) => 3,
            CliError::Corpus(_)
            | CliError::Prompt(_)
            | CliError::Rules(_)
            | CliError::Review(_)
            | CliError::Input { .. } => 4,
            CliError::Cache(_) | CliError::Batch(_) | CliError::CacheExists(_) | CliError::EmptyCache(_) => 5,
            CliError::Analysis(_) | CliError::NoScores(_) | CliError::MixedCorpora { .. } => 6,
            CliError::Io { .. } => 7,
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            3 => "configuration error",
            4 => "input error",
            5 => "cache error",
            6 => "analysis error",
            _ => "i/o error",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File stem shared by every per-configuration output.
pub fn config_stem(provider_id: &str, mode: PromptMode) -> String {
    format!("{provider_id}__{}", mode.short())
}

pub fn cache_path(out: &Path, provider_id: &str, mode: PromptMode) -> PathBuf {
    out.join("cache")
        .join(format!("{}.jsonl", config_stem(provider_id, mode)))
}

pub fn score_path(out: &Path, provider_id: &str, mode: PromptMode) -> PathBuf {
    out.join("scores")
        .join(format!("{}.csv", config_stem(provider_id, mode)))
}

/// Inputs shared by `query` and `score`.
struct Run {
    corpus: Corpus,
    spec: PromptSpec,
    provider: ProviderConfig,
    prompts: Vec<RenderedPrompt>,
}

fn prepare(args: &RunArgs) -> Result<Run, CliError> {
    let manifest = args.corpus.manifest.as_deref().map(load_manifest).transpose()?;
    let corpus = load_corpus(&args.corpus.corpus, manifest.as_ref())?;
    let spec = match &args.prompt_spec {
        Some(p) => load_prompt_spec(p)?,
        None => PromptSpec::default_few_shot(),
    };
    let spec = match &args.mode {
        Some(m) => spec.with_mode(m.parse().expect("clap restricts values"))?,
        None => spec,
    };
    spec.check_against_corpus(&corpus)?;
    let provider = ProviderConfig::load(&args.provider)?;
    let prompts = corpus
        .records()
        .iter()
        .map(|r| render_prompt(&spec, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Run {
        corpus,
        spec,
        provider,
        prompts,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report values serialize");
    bytes.push(b'\n');
    bytes
}

#[derive(Debug, Serialize)]
pub struct QuerySummary {
    pub config: String,
    pub cache: String,
    #[serde(flatten)]
    pub batch: llm_client::BatchSummary,
    pub provider_calls: usize,
}

pub fn cmd_query(args: &QueryArgs) -> Result<QuerySummary, CliError> {
    let run = prepare(&args.run)?;
    let mut provider = run.provider.clone();
    if let Some(n) = args.max_concurrency {
        provider.max_concurrency = n;
    }
    let client = Client::new(provider)?;
    let path = cache_path(&args.run.out, &run.provider.provider_id, run.spec.mode);
    let mut cache = ResponseCache::open(&path)?;
    if !args.resume && !cache.is_empty() {
        return Err(CliError::CacheExists(path));
    }
    let outcome = llm_client::run_batch(&client, &run.prompts, &mut cache)?;
    Ok(QuerySummary {
        config: ConfigId::new(&run.provider.provider_id, run.spec.mode).to_string(),
        cache: path.display().to_string(),
        batch: outcome.summary,
        provider_calls: client.call_count(),
    })
}

#[derive(Debug, Serialize)]
pub struct ExtractionSummary {
    pub config: String,
    pub records: usize,
    pub scored: usize,
    pub missing_records: Vec<String>,
    pub classes: BTreeMap<ExtractionClass, usize>,
    pub needs_review: usize,
    pub reviews_applied: usize,
    pub absent_templates: usize,
    pub tag_collisions: usize,
    pub rules_fired: BTreeMap<String, usize>,
    pub residual_flags: BTreeMap<String, usize>,
}

pub fn cmd_score(args: &ScoreArgs) -> Result<ExtractionSummary, CliError> {
    let run = prepare(&args.run)?;
    let rules = match &args.rules {
        Some(p) => load_rules(p)?,
        None => RuleSet::default_rules(),
    };
    let provider_id = run.provider.provider_id.as_str();
    let mode = run.spec.mode;
    let config = ConfigId::new(provider_id, mode);
    let out = &args.run.out;
    let cpath = cache_path(out, provider_id, mode);
    if !cpath.exists() {
        return Err(CliError::EmptyCache(cpath));
    }
    let cache = ResponseCache::open(&cpath)?;
    if cache.is_empty() {
        return Err(CliError::EmptyCache(cpath));
    }

    let extractor = Extractor {
        tpl_open: run.spec.tags.tpl_open.clone(),
        tpl_close: run.spec.tags.tpl_close.clone(),
        ..Extractor::default()
    };
    let mut missing = Vec::new();
    let mut answered = Vec::new();
    let mut candidates: Vec<TemplateCandidate> = Vec::new();
    let mut raw_texts = Vec::new();
    for (record, prompt) in run.corpus.records().iter().zip(&run.prompts) {
        let fp = llm_client::request_fingerprint(&prompt.text, &run.provider.model_name, run.provider.temperature);
        match cache.get(&fp) {
            None => missing.push(record.record_id.clone()),
            Some(cached) => {
                let mut resp = cached.clone();
                resp.record_id = record.record_id.clone();
                candidates.push(extractor.extract(&resp, &prompt.text));
                raw_texts.push(resp.raw_text);
                answered.push((record, prompt));
            }
        }
    }
    let review_rows = extraction::review_queue(candidates.iter().zip(raw_texts.iter().map(String::as_str)));
    let reviews_applied = match &args.apply_reviews {
        Some(p) => {
            let file = File::open(p).map_err(io_err(p))?;
            let reviews = extraction::read_review_file(file)?;
            extraction::apply_reviews(&mut candidates, &reviews)?
        }
        None => 0,
    };

    let mut rows: Vec<ScoreRow> = Vec::with_capacity(candidates.len());
    let mut rules_fired: BTreeMap<String, usize> = BTreeMap::new();
    let mut residual_flags: BTreeMap<String, usize> = BTreeMap::new();
    let mut absent = 0;
    for (cand, (record, _)) in candidates.iter().zip(&answered) {
        let normalized = cand.raw_template.as_deref().map(|t| rules.normalize(t));
        if let Some(n) = &normalized {
            for r in &n.rules_fired {
                *rules_fired.entry(r.clone()).or_default() += 1;
            }
            for f in &n.residual_flags {
                *residual_flags.entry(f.clone()).or_default() += 1;
            }
        } else {
            absent += 1;
        }
        rows.push(metrics::score_record(normalized.as_ref(), record, &config));
    }

    let metadata = run_metadata(&run, &rules);
    let mut buf = Vec::new();
    metrics::write_scores(&mut buf, &metadata, &rows).map_err(|e| CliError::Input {
        path: score_path(out, provider_id, mode),
        message: e.to_string(),
    })?;
    write_file(&score_path(out, provider_id, mode), &buf)?;

    let stem = config_stem(provider_id, mode);
    let mut review_buf = Vec::new();
    extraction::write_review_file(&mut review_buf, &review_rows)?;
    write_file(&out.join("review").join(format!("{stem}.csv")), &review_buf)?;

    let summary = ExtractionSummary {
        config: config.to_string(),
        records: run.corpus.len(),
        scored: rows.len(),
        missing_records: missing,
        classes: extraction::class_counts(&candidates),
        needs_review: candidates.iter().filter(|c| c.needs_review).count(),
        reviews_applied,
        absent_templates: absent,
        tag_collisions: answered.iter().filter(|(_, p)| p.tag_collision).count(),
        rules_fired,
        residual_flags,
    };
    write_file(&out.join("extraction").join(format!("{stem}.json")), &to_json(&summary))?;
    Ok(summary)
}

/// Header lines of every score file.
fn run_metadata(run: &Run, rules: &RuleSet) -> Vec<(String, String)> {
    let p = &run.provider;
    [
        ("corpus_hash", run.corpus.content_hash()),
        ("corpus_variant", run.corpus.provenance().variant.clone()),
        ("rules_hash", rules.content_hash()),
        ("prompt_spec_hash", run.spec.content_hash()),
        ("prompt_provenance", run.spec.provenance.clone()),
        ("provider_id", p.provider_id.clone()),
        ("model_name", p.model_name.clone()),
        ("mode", run.spec.mode.short().to_string()),
        ("temperature", p.temperature.to_string()),
        ("max_output_tokens", p.max_output_tokens.to_string()),
        ("max_retries", p.max_retries.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Serialize)]
pub struct ReportSummary {
    pub configurations: usize,
    pub rank_tables: usize,
    pub correlations: bool,
    pub report_dir: String,
}

pub fn cmd_report(args: &ReportArgs) -> Result<ReportSummary, CliError> {
    let dir = args.out.join("scores");
    let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    if files.is_empty() {
        return Err(CliError::NoScores(dir));
    }

    let mut rows = Vec::new();
    let mut per_config_meta: BTreeMap<ConfigId, BTreeMap<String, String>> = BTreeMap::new();
    let mut corpus: Option<(PathBuf, String)> = None;
    let mut project_order: Vec<String> = Vec::new();
    for path in &files {
        let file = File::open(path).map_err(io_err(path))?;
        let (meta, file_rows) = metrics::read_scores(file).map_err(|e| CliError::Input {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let meta: BTreeMap<String, String> = meta.into_iter().collect();
        let hash = meta.get("corpus_hash").cloned().ok_or_else(|| CliError::Input {
            path: path.clone(),
            message: "score file lacks a corpus_hash header".into(),
        })?;
        match &corpus {
            None => corpus = Some((path.clone(), hash)),
            Some((first, first_hash)) if *first_hash != hash => {
                return Err(CliError::MixedCorpora {
                    first: first.clone(),
                    first_hash: first_hash.clone(),
                    other: path.clone(),
                    other_hash: hash,
                })
            }
            Some(_) => {}
        }
        for r in &file_rows {
            if !project_order.contains(&r.project) {
                project_order.push(r.project.clone());
            }
            per_config_meta.entry(r.config()).or_insert_with(|| meta.clone());
        }
        rows.extend(file_rows);
    }
    if rows.is_empty() {
        return Err(CliError::NoScores(dir));
    }
    let (_, corpus_hash) = corpus.expect("at least one score file");

    let reports: BTreeMap<_, _> = analysis::aggregate_all(&rows)?
        .into_iter()
        .map(|(c, a)| {
            let meta = per_config_meta.remove(&c).unwrap_or_default();
            (c, a.with_metadata(meta))
        })
        .collect();
    let rank_tables = analysis::rank_all(&reports)?;
    let correlations = if reports.len() >= 2 {
        Some(analysis::comparison_report(&rank_tables)?)
    } else {
        None
    };
    let metadata = BTreeMap::from([
        ("corpus_hash".to_string(), corpus_hash),
        ("median_convention".to_string(), analysis::MEDIAN_CONVENTION.to_string()),
        ("tie_policy".to_string(), analysis::TIE_POLICY.to_string()),
    ]);
    let report = FullReport {
        metadata,
        aggregates: reports.into_values().collect(),
        rank_tables,
        correlations,
    };
    write_report(&args.out.join("report"), &report, &project_order)?;
    Ok(ReportSummary {
        configurations: report.aggregates.len(),
        rank_tables: report.rank_tables.len(),
        correlations: report.correlations.is_some(),
        report_dir: args.out.join("report").display().to_string(),
    })
}

fn write_report(dir: &Path, report: &FullReport, projects: &[String]) -> Result<(), CliError> {
    let header: String = report.metadata.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect();
    let with_header = |body: String| format!("{header}\n{body}").into_bytes();
    write_file(&dir.join("report.json"), &to_json(report))?;
    write_file(
        &dir.join("rank_tables.txt"),
        &with_header(analysis::rank_grid(&report.rank_tables)),
    )?;
    write_file(
        &dir.join("table_pa.txt"),
        &with_header(analysis::pa_table(&report.aggregates, Some(projects))),
    )?;
    let (ed, lcs) = analysis::median_tables(&report.aggregates, Some(projects));
    write_file(&dir.join("table_ed_median.txt"), &with_header(ed))?;
    write_file(&dir.join("table_lcs_median.txt"), &with_header(lcs))?;
    let corr = dir.join("correlations.txt");
    match &report.correlations {
        Some(c) => write_file(&corr, &with_header(analysis::correlation_text(c)))?,
        None => {
            if corr.exists() {
                fs::remove_file(&corr).map_err(io_err(&corr))?;
            }
        }
    }
    Ok(())
}

/// Parses `argv`, runs the command, prints its summary as JSON and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Query(a) => cmd_query(a).map(|s| to_json(&s)),
        Command::Score(a) => cmd_score(a).map(|s| {
            for id in &s.missing_records {
                eprintln!("missing response for record {id}");
            }
            to_json(&s)
        }),
        Command::Report(a) => cmd_report(a).map(|s| to_json(&s)),
    };
    match result {
        Ok(bytes) => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            let _ = w.write_all(&bytes);
            let _ = w.flush();
            0
        }
        Err(e) => {
            eprintln!("logbench: {}: {e}", e.category());
            e.exit_code()
        }
    }
}
