//! The `gaelforge` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 data, 4 network.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clean::{clean_corpus, clean_corpus_parallel, CleanError, FilterConfig, FilterReport};
use crate::corpus::{
    read_bitext, read_documents, BitextPair, CorpusError, CorpusManifest, Document, SourceEntry,
    SourceKind, SourceStats, StatsAccumulator,
};
use crate::dedup::{dedup_stream, dedup_stream_parallel, DedupConfig, DedupError, DedupIndex, DedupReport, Deduper};
use crate::evalsuite::{
    bleu_stats, perplexity, score_choices, score_em, select_base_model, ChoiceItem, EvalError,
    LogprobRecord, MetricValue, ModelProfile, Prediction, QaItem, ScoreReport,
};
use crate::judge::{
    aggregate, load_bench, load_transcripts, run_judging, HttpJudge, JudgeConfig, JudgeError,
    JudgeReport, JudgeVerdict,
};
use crate::records::{read_records, write_json, write_records, RecordError};
use crate::scheduler::{build_schedule, BitextStream, MonoInput, ScheduleConfig, ScheduleError};
use crate::tokenizer::{
    merge_vocab, profile, profile_parallel, train_bpe, BpeFragment, BpeModel, TokenizerError,
    TokenizerProfile,
};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Network(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Network(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::ManifestParse { .. }
            | CorpusError::DuplicateSource { .. }
            | CorpusError::InvalidWeight { .. }
            | CorpusError::WeightSum { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CleanError> for CliError {
    fn from(e: CleanError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DedupError> for CliError {
    fn from(e: DedupError) -> Self {
        match e {
            DedupError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::InvalidConfig(_) | JudgeError::MissingPlaceholder(_) => {
                CliError::Config(e.to_string())
            }
            JudgeError::Network { .. } | JudgeError::Status { .. } | JudgeError::MalformedResponse(_) => {
                CliError::Network(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gaelforge", version, about = "Corpus engineering and evaluation toolkit")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 selects the single-threaded reference paths.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-source character counts before and after processing.
    Stats(StatsArgs),
    /// Apply heuristic quality filters to every mono source.
    Clean(CleanArgs),
    /// Remove near-duplicate documents across sources in manifest order.
    Dedup(DedupArgs),
    /// Learn BPE merges from the mono sources of a manifest.
    TokenizerTrain(TrainArgs),
    /// Append trained merges to a base tokenizer.
    TokenizerMerge(MergeArgs),
    /// Measure chars/token and fertility of tokenizers on a corpus.
    TokenizerProfile(ProfileArgs),
    /// Pack parallel and mono data into training shards.
    Schedule(ScheduleArgs),
    /// Exact-match accuracy of QA predictions.
    ScoreEm(ScoreEmArgs),
    /// Loglikelihood multiple-choice accuracy.
    ScoreChoice(ScoreChoiceArgs),
    /// Corpus BLEU-4.
    ScoreBleu(ScoreBleuArgs),
    /// Perplexity per model from token logprobs.
    ScorePpl(ScorePplArgs),
    /// Pick the lowest-perplexity model under a parameter cap.
    SelectModel(SelectModelArgs),
    /// Rate benchmark transcripts with an external judge model.
    Judge(JudgeArgs),
    /// Merge score reports and judge verdicts into one report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Manifest of the unprocessed corpus.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest of the processed corpus; defaults to --manifest.
    #[arg(long)]
    pub after: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Filter thresholds (TOML); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for filtered sources, manifest and report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dedup settings (TOML); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Previously saved shingle index to extend.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub merges: usize,
    /// Output fragment file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Base model; the 256-token byte-level model when absent.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub fragment: PathBuf,
    /// Number of new tokens to add.
    #[arg(long)]
    pub target: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON summary of the expansion.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Models to profile; each is labelled by its file stem.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Corpus whose mono sources are tokenized.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Corpus label in the report.
    #[arg(long, default_value = "corpus")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Schedule settings (TOML); the seed always comes from --seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Mono-phase token budget; one pass over the data when absent.
    #[arg(long)]
    pub mono_budget: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreEmArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Word removed before comparison; repeatable.
    #[arg(long = "stop-token")]
    pub stop_tokens: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreChoiceArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Divide candidate logprobs by their UTF-8 byte length.
    #[arg(long)]
    pub normalized: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreBleuArgs {
    /// One hypothesis per line.
    #[arg(long)]
    pub hypotheses: PathBuf,
    /// One reference per line, aligned with the hypotheses.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScorePplArgs {
    #[arg(long)]
    pub logprobs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectModelArgs {
    /// Records with `model_id` and `param_count`.
    #[arg(long)]
    pub profiles: PathBuf,
    /// Records with `model_id` and `logprobs`.
    #[arg(long)]
    pub logprobs: PathBuf,
    /// Models need strictly fewer parameters than this.
    #[arg(long, default_value_t = 20_000_000_000)]
    pub cap: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long)]
    pub transcripts: PathBuf,
    /// Judge settings (TOML) including the endpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the endpoint URL.
    #[arg(long)]
    pub url: Option<String>,
    /// Overrides the judge model name.
    #[arg(long)]
    pub judge_model: Option<String>,
    /// Append-only verdict file; existing verdicts are reused.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Score report files to merge.
    #[arg(long = "scores")]
    pub scores: Vec<PathBuf>,
    /// Verdict store to aggregate.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let ctx = Ctx {
        seed: cli.seed,
        threads,
    };
    pool.install(|| match &cli.command {
        Command::Stats(a) => cmd_stats(a),
        Command::Clean(a) => cmd_clean(&ctx, a),
        Command::Dedup(a) => cmd_dedup(&ctx, a),
        Command::TokenizerTrain(a) => cmd_train(a),
        Command::TokenizerMerge(a) => cmd_merge(a),
        Command::TokenizerProfile(a) => cmd_profile(&ctx, a),
        Command::Schedule(a) => cmd_schedule(&ctx, a),
        Command::ScoreEm(a) => cmd_score_em(a),
        Command::ScoreChoice(a) => cmd_score_choice(a),
        Command::ScoreBleu(a) => cmd_score_bleu(a),
        Command::ScorePpl(a) => cmd_score_ppl(a),
        Command::SelectModel(a) => cmd_select_model(a),
        Command::Judge(a) => cmd_judge(&ctx, a),
        Command::Report(a) => cmd_report(a),
    })
}

struct Ctx {
    seed: u64,
    threads: usize,
}

impl Ctx {
    fn reference(&self) -> bool {
        self.threads == 1
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_config_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&read_config_text(p)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn load_manifest(path: &Path) -> Result<CorpusManifest, CliError> {
    Ok(crate::corpus::load_manifest(path)?)
}

fn records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    Ok(read_records(path)?.into_iter().map(|(_, r)| r).collect())
}

/// File name for a source's output, safe on every platform.
fn source_file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.jsonl")
}

/// Output paths per source, rejecting names that collide after sanitizing.
fn output_paths(manifest: &CorpusManifest, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut seen = HashSet::new();
    manifest
        .sources
        .iter()
        .map(|s| {
            let file = source_file_name(&s.name);
            if !seen.insert(file.clone()) {
                return Err(CliError::Config(format!(
                    "source {:?} maps to an output file name already in use",
                    s.name
                )));
            }
            Ok(dir.join(file))
        })
        .collect()
}

fn write_output_manifest(manifest: &CorpusManifest, paths: &[PathBuf], dir: &Path) -> Result<(), CliError> {
    let out = CorpusManifest {
        sources: manifest
            .sources
            .iter()
            .zip(paths)
            .map(|(s, p)| SourceEntry {
                path: p.clone(),
                ..s.clone()
            })
            .collect(),
    };
    out.write(&dir.join(MANIFEST_FILE))?;
    Ok(())
}

/// Rewrites a bitext source's valid pairs into the output directory.
fn copy_bitext(source: &SourceEntry, dest: &Path) -> Result<u64, CliError> {
    let pairs: Vec<BitextPair> = read_bitext(source)?.collect::<Result<_, _>>()?;
    write_records(dest, &pairs)?;
    Ok(pairs.len() as u64)
}

fn docs_of(source: &SourceEntry) -> Result<impl Iterator<Item = Result<Document, CliError>>, CliError> {
    Ok(read_documents(source)?.map(|r| r.map_err(CliError::from)))
}

#[derive(Serialize)]
struct StatsReport {
    sources: Vec<SourceStats>,
    chars_before: u64,
    chars_after: u64,
}

fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let before = load_manifest(&a.manifest)?;
    let after = match &a.after {
        Some(p) => load_manifest(p)?,
        None => before.clone(),
    };
    let mut acc = StatsAccumulator::new();
    for s in before.mono_sources() {
        acc.register(&s.name);
        for d in read_documents(s)? {
            acc.add_before(&d?);
        }
    }
    for s in after.mono_sources() {
        for d in read_documents(s)? {
            acc.add_after(&d?);
        }
    }
    let sources = acc.finish()?;
    let report = StatsReport {
        chars_before: sources.iter().map(|s| s.chars_before).sum(),
        chars_after: sources.iter().map(|s| s.chars_after).sum(),
        sources,
    };
    write_json(&a.out, &report)?;
    println!("{:<24} {:>14} {:>14} {:>8}", "source", "chars before", "chars after", "ratio");
    for s in &report.sources {
        println!(
            "{:<24} {:>14} {:>14} {:>7.1}%",
            s.source,
            s.chars_before,
            s.chars_after,
            s.ratio_after * 100.0
        );
    }
    println!("{:<24} {:>14} {:>14}", "total", report.chars_before, report.chars_after);
    Ok(())
}

#[derive(Serialize)]
struct CleanReport {
    config: FilterConfig,
    sources: BTreeMap<String, FilterReport>,
    total: FilterReport,
}

fn cmd_clean(ctx: &Ctx, a: &CleanArgs) -> Result<(), CliError> {
    let cfg: FilterConfig = parse_config(a.config.as_deref())?;
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let paths = output_paths(&manifest, &a.out)?;
    let mut sources = BTreeMap::new();
    let mut total = FilterReport::default();
    for (s, dest) in manifest.sources.iter().zip(&paths) {
        match s.kind {
            SourceKind::Bitext => {
                copy_bitext(s, dest)?;
            }
            SourceKind::Mono => {
                let docs = docs_of(s)?;
                let (kept, report) = if ctx.reference() {
                    clean_corpus(docs, &cfg)?
                } else {
                    clean_corpus_parallel(docs, &cfg)?
                };
                write_records(dest, &kept)?;
                println!(
                    "{}: kept {} of {} documents",
                    s.name, report.total_kept, report.total_in
                );
                total.merge(&report);
                sources.insert(s.name.clone(), report);
            }
        }
    }
    write_output_manifest(&manifest, &paths, &a.out)?;
    write_json(&a.out.join("clean_report.json"), &CleanReport { config: cfg, sources, total })?;
    Ok(())
}

#[derive(Serialize)]
struct DedupRunReport {
    config: DedupConfig,
    report: DedupReport,
}

fn cmd_dedup(ctx: &Ctx, a: &DedupArgs) -> Result<(), CliError> {
    let cfg: DedupConfig = parse_config(a.config.as_deref())?;
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let paths = output_paths(&manifest, &a.out)?;
    let mono: Vec<(&SourceEntry, &PathBuf)> = manifest
        .sources
        .iter()
        .zip(&paths)
        .filter(|(s, _)| s.kind == SourceKind::Mono)
        .collect();

    let (index, report) = match &a.index {
        // Continuing from a saved index needs the incremental path.
        Some(index_path) => {
            let index = DedupIndex::load(index_path)?;
            let mut deduper = Deduper::with_index(cfg.clone(), index)?;
            for (s, dest) in &mono {
                deduper.begin_source(&s.name);
                let mut kept = Vec::new();
                for d in read_documents(s)? {
                    let d = d?;
                    if deduper.process(&d) {
                        kept.push(d);
                    }
                }
                write_records(dest, &kept)?;
            }
            deduper.finish()
        }
        None => {
            let streams = mono
                .iter()
                .map(|(s, _)| Ok((s.name.clone(), docs_of(s)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            let (kept, report) = if ctx.reference() {
                dedup_stream(streams, &cfg)?
            } else {
                dedup_stream_parallel(streams, &cfg)?
            };
            let mut by_source: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
            for d in &kept {
                by_source.entry(&d.source).or_default().push(d);
            }
            for (s, dest) in &mono {
                write_records(dest, by_source.remove(s.name.as_str()).unwrap_or_default())?;
            }
            let mut deduper_index = DedupIndex::new(cfg.n);
            for d in &kept {
                deduper_index.commit(&crate::dedup::Candidate::new(&d.text, cfg.n));
            }
            (deduper_index, report)
        }
    };
    for (s, dest) in manifest.sources.iter().zip(&paths) {
        if s.kind == SourceKind::Bitext {
            copy_bitext(s, dest)?;
        }
    }
    index.save(&a.out.join("index.gfdx"))?;
    write_output_manifest(&manifest, &paths, &a.out)?;
    for s in &report.sources {
        println!("{}: kept {}, dropped {}", s.source, s.kept, s.dropped);
    }
    write_json(&a.out.join("dedup_report.json"), &DedupRunReport { config: cfg, report })?;
    Ok(())
}

fn mono_texts(manifest: &CorpusManifest) -> Result<Vec<String>, CliError> {
    let mut texts = Vec::new();
    for s in manifest.mono_sources() {
        for d in read_documents(s)? {
            texts.push(d?.text);
        }
    }
    Ok(texts)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let texts = mono_texts(&manifest)?;
    let fragment = train_bpe(&texts, a.merges)?;
    fragment.save(&a.out)?;
    println!("learned {} of {} requested merges", fragment.merges.len(), a.merges);
    Ok(())
}

#[derive(Serialize)]
struct MergeReport {
    base_size: usize,
    vocab_size: usize,
    requested: usize,
    added: usize,
    skipped: usize,
    exhausted: bool,
}

fn cmd_merge(a: &MergeArgs) -> Result<(), CliError> {
    let base = match &a.base {
        Some(p) => BpeModel::load(p)?,
        None => BpeModel::byte_level(),
    };
    let fragment = BpeFragment::load(&a.fragment)?;
    let out = merge_vocab(&base, &fragment, a.target);
    out.model.save(&a.out)?;
    let report = MergeReport {
        base_size: out.model.base_size(),
        vocab_size: out.model.vocab_size(),
        requested: a.target,
        added: out.added,
        skipped: out.skipped,
        exhausted: out.exhausted,
    };
    println!(
        "vocabulary {} -> {} ({} added{})",
        report.base_size,
        report.vocab_size,
        report.added,
        if report.exhausted { ", fragment exhausted" } else { "" }
    );
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LabelledProfile {
    model: String,
    vocab_size: usize,
    profile: TokenizerProfile,
}

#[derive(Serialize)]
struct ProfileReport {
    corpus: String,
    models: Vec<LabelledProfile>,
}

fn cmd_profile(ctx: &Ctx, a: &ProfileArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let texts = mono_texts(&manifest)?;
    let mut models = Vec::new();
    for path in &a.models {
        let model = BpeModel::load(path)?;
        let p = if ctx.reference() {
            profile(&model, &a.name, &texts)?
        } else {
            profile_parallel(&model, &a.name, &texts)?
        };
        let label = path
            .file_stem()
            .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
        println!(
            "{label}: {:.4} chars/token, fertility {:.4}",
            p.chars_per_token, p.fertility
        );
        models.push(LabelledProfile {
            model: label,
            vocab_size: model.vocab_size(),
            profile: p,
        });
    }
    write_json(
        &a.out,
        &ProfileReport {
            corpus: a.name.clone(),
            models,
        },
    )?;
    Ok(())
}

fn cmd_schedule(ctx: &Ctx, a: &ScheduleArgs) -> Result<(), CliError> {
    let mut cfg: ScheduleConfig = parse_config(a.config.as_deref())?;
    cfg.seed = ctx.seed;
    if let Some(n) = a.seq_len {
        cfg.seq_len = n;
    }
    if a.mono_budget.is_some() {
        cfg.mono_token_budget = a.mono_budget;
    }
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let model = BpeModel::load(&a.model)?;
    let weights: BTreeMap<String, f64> = match &cfg.mono_weights {
        Some(w) => w.clone(),
        None => manifest.mono_sources().map(|s| (s.name.clone(), s.weight)).collect(),
    };
    for name in weights.keys() {
        if manifest.mono_sources().all(|s| &s.name != name) {
            return Err(CliError::Config(format!("weighted source {name:?} is not a mono source in the manifest")));
        }
    }
    let mut mono = Vec::new();
    for s in manifest.mono_sources() {
        let Some(&weight) = weights.get(&s.name) else {
            log::info!("source {:?} has no weight and is not scheduled", s.name);
            continue;
        };
        mono.push(MonoInput {
            name: s.name.clone(),
            weight,
            docs: Box::new(read_documents(s)?),
        });
    }
    let mut bitext: Vec<(String, BitextStream<'_>)> = Vec::new();
    for s in manifest.bitext_sources() {
        bitext.push((s.name.clone(), Box::new(read_bitext(s)?)));
    }
    let index = build_schedule(&a.out, mono, bitext, &model, &cfg)?;
    println!(
        "parallel: {} rows ({} tokens, budget {}); mono: {} rows ({} tokens)",
        index.parallel.rows, index.parallel.tokens, index.parallel_token_budget, index.mono.rows, index.mono.tokens
    );
    for (name, tokens) in &index.mono.source_histogram {
        println!(
            "  {name}: {:.2}%",
            *tokens as f64 * 100.0 / index.mono.tokens.max(1) as f64
        );
    }
    Ok(())
}

fn write_scores(path: &Path, report: &ScoreReport) -> Result<(), CliError> {
    for (name, m) in &report.metrics {
        println!("{name}: {:.6} over {} item(s)", m.value, m.items);
    }
    Ok(write_json(path, report)?)
}

fn cmd_score_em(a: &ScoreEmArgs) -> Result<(), CliError> {
    let items: Vec<QaItem> = records(&a.dataset)?;
    let preds: Vec<Prediction> = records(&a.predictions)?;
    let m = score_em(&items, &preds, &a.stop_tokens)?;
    write_scores(&a.out, &ScoreReport::single("exact_match", m))
}

fn cmd_score_choice(a: &ScoreChoiceArgs) -> Result<(), CliError> {
    let items: Vec<ChoiceItem> = records(&a.dataset)?;
    let m = score_choices(&items, a.normalized)?;
    let name = if a.normalized { "accuracy_norm" } else { "accuracy" };
    write_scores(&a.out, &ScoreReport::single(name, m))
}

fn cmd_score_bleu(a: &ScoreBleuArgs) -> Result<(), CliError> {
    let hyps: Vec<String> = read_text(&a.hypotheses)?.lines().map(str::to_string).collect();
    let refs: Vec<String> = read_text(&a.references)?.lines().map(str::to_string).collect();
    let stats = bleu_stats(&hyps, &refs)?;
    let m = MetricValue {
        items: hyps.len() as u64,
        ..MetricValue::from(&stats)
    };
    write_scores(&a.out, &ScoreReport::single("bleu4", m))
}

/// Logprobs concatenated per model, models in first-appearance order.
fn logprobs_by_model(path: &Path) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for r in records::<LogprobRecord>(path)? {
        match out.iter_mut().find(|(m, _)| *m == r.model_id) {
            Some((_, v)) => v.extend(r.logprobs),
            None => out.push((r.model_id, r.logprobs)),
        }
    }
    Ok(out)
}

fn cmd_score_ppl(a: &ScorePplArgs) -> Result<(), CliError> {
    let mut report = ScoreReport::default();
    for (model, lps) in logprobs_by_model(&a.logprobs)? {
        let ppl = perplexity(&lps)?;
        report
            .metrics
            .insert(format!("perplexity/{model}"), MetricValue::new(ppl, lps.len() as u64));
    }
    if report.metrics.is_empty() {
        return Err(CliError::Data(format!("{}: no logprob records", a.logprobs.display())));
    }
    write_scores(&a.out, &report)
}

#[derive(Deserialize)]
struct ParamRecord {
    model_id: String,
    param_count: u64,
}

#[derive(Serialize)]
struct Candidate {
    model_id: String,
    param_count: u64,
    perplexity: Option<f64>,
    qualifies: bool,
}

#[derive(Serialize)]
struct SelectionReport {
    selected: String,
    perplexity: f64,
    cap: u64,
    candidates: Vec<Candidate>,
}

fn cmd_select_model(a: &SelectModelArgs) -> Result<(), CliError> {
    let params: Vec<ParamRecord> = records(&a.profiles)?;
    let lps = logprobs_by_model(&a.logprobs)?;
    let mut profiles = Vec::new();
    for p in params {
        let logprobs = lps
            .iter()
            .find(|(m, _)| *m == p.model_id)
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        if p.param_count == 0 {
            return Err(CliError::Data(format!("model {:?} has zero parameters", p.model_id)));
        }
        profiles.push(ModelProfile {
            model_id: p.model_id,
            param_count: p.param_count,
            logprobs,
        });
    }
    let (selected, ppl) = select_base_model(&profiles, a.cap)?;
    let candidates = profiles
        .iter()
        .map(|p| Candidate {
            model_id: p.model_id.clone(),
            param_count: p.param_count,
            perplexity: p.perplexity().ok(),
            qualifies: p.param_count < a.cap,
        })
        .collect();
    println!("selected {selected} (perplexity {ppl:.4})");
    write_json(
        &a.out,
        &SelectionReport {
            selected,
            perplexity: ppl,
            cap: a.cap,
            candidates,
        },
    )?;
    Ok(())
}

fn print_judge_report(r: &JudgeReport) {
    let show = |label: &str, m: &crate::judge::TurnMeans| {
        let f = |x: &Option<crate::judge::Mean>| x.as_ref().map_or("-".to_string(), |m| format!("{:.3}", m.mean));
        println!("{label:<24} all turns {:>7}  first turn {:>7}", f(&m.all_turns), f(&m.first_turn));
    };
    show("overall", &r.overall);
    for (m, v) in &r.per_model {
        show(m, v);
    }
}

fn cmd_judge(ctx: &Ctx, a: &JudgeArgs) -> Result<(), CliError> {
    let mut cfg: JudgeConfig = parse_config(a.config.as_deref())?;
    if let Some(u) = &a.url {
        cfg.endpoint.url = u.clone();
    }
    if let Some(m) = &a.judge_model {
        cfg.endpoint.model = m.clone();
    }
    cfg.validate()?;
    let bench = load_bench(&a.bench, &cfg.categories)?;
    let transcripts = load_transcripts(&a.transcripts)?;
    let client = HttpJudge::new(cfg.endpoint.clone())?;
    let parallelism = cfg.endpoint.parallelism.min(ctx.threads);
    let run = run_judging(&bench, &transcripts, &client, &cfg, Some(&a.store), parallelism)?;
    println!(
        "{} verdicts ({} reused, {} requested, {} without a rating)",
        run.verdicts.len(),
        run.resumed,
        run.requested,
        run.unparsed.len()
    );
    if run.verdicts.is_empty() {
        return Err(CliError::Data("no verdicts were produced".into()));
    }
    let report = aggregate(&run.verdicts)?;
    print_judge_report(&report);
    write_json(&a.out, &report)?;
    if !run.unparsed.is_empty() {
        return Err(CliError::Data(format!(
            "{} judge replies had no usable rating; rerun to retry them",
            run.unparsed.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct CombinedReport {
    metrics: BTreeMap<String, MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    judge: Option<JudgeReport>,
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    if a.scores.is_empty() && a.verdicts.is_none() {
        return Err(CliError::Usage("give at least one --scores file or --verdicts".into()));
    }
    let mut merged = ScoreReport::default();
    for p in &a.scores {
        let r: ScoreReport = serde_json::from_str(&read_text(p)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        merged.merge(r);
    }
    let judge = match &a.verdicts {
        Some(p) => {
            let verdicts: Vec<JudgeVerdict> = records(p)?;
            let r = aggregate(&verdicts)?;
            print_judge_report(&r);
            Some(r)
        }
        None => None,
    };
    for (name, m) in &merged.metrics {
        println!("{name}: {:.6}", m.value);
    }
    write_json(
        &a.out,
        &CombinedReport {
            metrics: merged.metrics,
            judge,
        },
    )?;
    Ok(())
}
