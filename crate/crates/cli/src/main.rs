//! `proclip`: synthesize corpora, train, evaluate, query and benchmark the
//! two-stage text-to-video retrieval pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use proclip_core::corpus::{read_corpus, synth_corpus, validate_corpus, write_corpus, CorpusBundle, QueryRecord, SynthSpec};
use proclip_core::engine::{
    bench, index_corpus, latency_csv, ranked_csv, read_index, write_index, BenchConfig, Pipeline, RetrievalIndex,
    RetrieveConfig, DEFAULT_K_FRAMES, DEFAULT_K_PERCENT,
};
use proclip_core::model::{read_checkpoint, write_checkpoint, ModelConfig, ModelParams};
use proclip_core::pruner::check_k_percent;
use proclip_core::trainer::{train_distill_stage, train_retrieval_from, training_log_csv, EpochLog, TrainConfig};
use proclip_core::{Error, Mat};

const EXIT_IO: u8 = 3;
const EXIT_INVALID: u8 = 4;
const TOP_RESULTS: usize = 10;

#[derive(Parser)]
#[command(name = "proclip", version, about = "Prompt-aware two-stage text-to-video retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted query-relevant frames.
    Synth(SynthArgs),
    /// Check a corpus file for structural problems.
    Validate(CorpusArg),
    /// Write a freshly initialized model checkpoint.
    Init(InitArgs),
    /// Train the retrieval stage, the distillation stage, or both.
    Train(TrainArgs),
    /// Precompute the retrieval index for a corpus and model.
    Index(IndexArgs),
    /// Report R@1, R@5, R@10 and mean rank over the corpus queries.
    Eval(EvalArgs),
    /// Rank the corpus for one query and print the top results.
    Query(QueryArgs),
    /// Sweep the pruning ratio and report latency per setting.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CorpusArg {
    /// Corpus file (PCLP).
    #[arg(short, long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    videos: usize,
    #[arg(long, default_value_t = 50)]
    queries: usize,
    #[arg(long, default_value_t = 32)]
    min_frames: usize,
    #[arg(long, default_value_t = 32)]
    max_frames: usize,
    #[arg(long, default_value_t = 48)]
    raw_dim: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    words: usize,
    #[arg(long, default_value_t = 10.0)]
    min_duration: f64,
    #[arg(long, default_value_t = 120.0)]
    max_duration: f64,
    /// Planted signal-to-noise ratio; `inf` gives noise-free relevant frames.
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    #[arg(long, default_value_t = 0.5)]
    relevant_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct InitArgs {
    #[arg(short, long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Retrieval,
    Distill,
    Both,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(short, long)]
    corpus: PathBuf,
    /// Starting checkpoint; required for `--stage distill`.
    #[arg(short, long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StageArg::Both)]
    stage: StageArg,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 40)]
    distill_epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_head: Option<f64>,
    #[arg(long)]
    logit_scale: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_K_FRAMES)]
    k_frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training log CSV (`epoch,loss,temperature`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(short, long)]
    corpus: PathBuf,
    #[arg(short, long)]
    model: PathBuf,
    /// Prebuilt index; built on the fly when omitted.
    #[arg(long)]
    index: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Percentage of the corpus kept for fine scoring, in (0, 100].
    #[arg(short, long, default_value_t = DEFAULT_K_PERCENT)]
    k_percent: f64,
    /// Frames selected per video.
    #[arg(long, default_value_t = DEFAULT_K_FRAMES)]
    k_frames: usize,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(short, long)]
    corpus: PathBuf,
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    retrieve: RetrieveArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    retrieve: RetrieveArgs,
    /// Id of a query stored in the corpus.
    #[arg(long, conflicts_with = "embedding", required_unless_present = "embedding")]
    query_id: Option<String>,
    /// JSON file `{"words": [[...], ...], "sentence": [...]}`.
    #[arg(long)]
    embedding: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated pruning ratios in percent.
    #[arg(long, value_delimiter = ',', default_value = "100,90,80,70,60,50,40,30,20,10,5")]
    k_list: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, default_value_t = DEFAULT_K_FRAMES)]
    k_frames: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Deserialize)]
struct QueryEmbedding {
    words: Vec<Vec<f64>>,
    sentence: Vec<f64>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_INVALID,
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Error> {
    match output {
        Some(path) => at_path(path, fs::write(path, text).map_err(Error::from))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Worker count from `PROCLIP_THREADS`; unset means rayon's default.
fn configure_threads() -> Result<bool, Error> {
    let Ok(raw) = std::env::var("PROCLIP_THREADS") else {
        return Ok(true);
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::InvalidArgument(format!("PROCLIP_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(threads > 1)
}

/// Prefixes I/O failures with the offending path.
fn at_path<T>(path: &Path, result: Result<T, Error>) -> Result<T, Error> {
    result.map_err(|err| match err {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn corpus_at(path: &Path) -> Result<CorpusBundle, Error> {
    at_path(path, read_corpus(path))
}

fn model_at(path: &Path) -> Result<ModelParams, Error> {
    at_path(path, read_checkpoint(path))
}

fn load(args: &ModelArgs, parallel: bool) -> Result<(CorpusBundle, ModelParams, RetrievalIndex), Error> {
    let corpus = corpus_at(&args.corpus)?;
    let model = model_at(&args.model)?;
    let index = match &args.index {
        Some(path) => at_path(path, read_index(path))?,
        None => index_corpus(&corpus, &model, parallel)?,
    };
    Ok((corpus, model, index))
}

fn retrieve_config(args: &RetrieveArgs, parallel: bool) -> Result<RetrieveConfig, Error> {
    check_k_percent(args.k_percent)?;
    if args.k_frames == 0 {
        return Err(Error::InvalidArgument("k-frames must be at least 1".into()));
    }
    Ok(RetrieveConfig { k_percent: args.k_percent, k_frames: args.k_frames, parallel })
}

fn synth(args: SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        n_videos: args.videos,
        n_queries: args.queries,
        frames_per_video: (args.min_frames, args.max_frames),
        raw_dim: args.raw_dim,
        dim: args.dim,
        words_per_query: args.words,
        duration_range: (args.min_duration, args.max_duration),
        relevance_snr: args.snr,
        relevant_frame_fraction: args.relevant_fraction,
        seed: args.seed,
    };
    at_path(&args.output, write_corpus(&synth_corpus(&spec)?, &args.output))
}

fn validate(args: CorpusArg) -> Result<(), Error> {
    let report = validate_corpus(&corpus_at(&args.corpus)?);
    if report.is_valid() {
        println!("ok");
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    Err(Error::InvalidData(format!("{} violation(s)", report.violations.len())))
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let corpus = corpus_at(&args.corpus)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        lr_backbone: args.lr_backbone.unwrap_or(defaults.lr_backbone),
        lr_head: args.lr_head.unwrap_or(defaults.lr_head),
        logit_scale: args.logit_scale.unwrap_or(defaults.logit_scale),
        seed: args.seed,
        k_frames: args.k_frames,
        ..defaults
    };
    let start = match &args.model {
        Some(path) => model_at(path)?,
        None if args.stage == StageArg::Distill => {
            return Err(Error::InvalidArgument("--stage distill needs a trained --model".into()));
        }
        None => ModelParams::init(ModelConfig::new(corpus.raw_dim, corpus.dim), args.seed)?,
    };
    let mut log: Vec<EpochLog> = Vec::new();
    let mut model = start;
    if args.stage != StageArg::Distill {
        let (trained, trace) = train_retrieval_from(model, &corpus, &config)?;
        model = trained;
        log.extend(trace);
    }
    if args.stage != StageArg::Retrieval {
        let distill_config = TrainConfig { epochs: args.distill_epochs, ..config };
        let (trained, trace) = train_distill_stage(&corpus, &model, &distill_config)?;
        model = trained;
        let offset = log.len();
        log.extend(trace.into_iter().map(|e| EpochLog { epoch: e.epoch + offset, ..e }));
    }
    model.quantize();
    at_path(&args.output, write_checkpoint(&model, &args.output))?;
    if let Some(path) = &args.log {
        at_path(path, fs::write(path, training_log_csv(&log)).map_err(Error::from))?;
    }
    Ok(())
}

fn query_from_file(path: &Path, dim: usize) -> Result<QueryRecord, Error> {
    let text = at_path(path, fs::read_to_string(path).map_err(Error::from))?;
    let parsed: QueryEmbedding = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    if parsed.words.is_empty() || parsed.words.iter().any(|w| w.len() != dim) || parsed.sentence.len() != dim {
        return Err(Error::DimensionMismatch(format!("query embedding must have width {dim} and at least one word")));
    }
    Ok(QueryRecord {
        id: path.display().to_string(),
        words: Mat::from_rows(&parsed.words),
        sentence: parsed.sentence,
        ground_truth_video: String::new(),
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    let parallel = configure_threads()?;
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Validate(args) => validate(args),
        Command::Init(args) => {
            let corpus = corpus_at(&args.corpus)?;
            let model = ModelParams::init(ModelConfig::new(corpus.raw_dim, corpus.dim), args.seed)?;
            at_path(&args.output, write_checkpoint(&model, &args.output))
        }
        Command::Train(args) => train(args),
        Command::Index(args) => {
            let corpus = corpus_at(&args.corpus)?;
            let model = model_at(&args.model)?;
            at_path(&args.output, write_index(&index_corpus(&corpus, &model, parallel)?, &args.output))
        }
        Command::Eval(args) => {
            let config = retrieve_config(&args.retrieve, parallel)?;
            let (corpus, model, index) = load(&args.model, parallel)?;
            let report = Pipeline::new(&corpus, &model, &index)?.evaluate(&corpus.queries, &config)?;
            emit(&report.to_csv(), args.output.as_deref())
        }
        Command::Query(args) => {
            let config = retrieve_config(&args.retrieve, parallel)?;
            let (corpus, model, index) = load(&args.model, parallel)?;
            let query = match (&args.query_id, &args.embedding) {
                (Some(id), _) => corpus
                    .query(id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no query with id {id}")))?,
                (None, Some(path)) => query_from_file(path, corpus.dim)?,
                (None, None) => unreachable!("clap requires one of --query-id and --embedding"),
            };
            let list = Pipeline::new(&corpus, &model, &index)?.retrieve(&query, &config)?;
            emit(&ranked_csv(&list, TOP_RESULTS), args.output.as_deref())
        }
        Command::Bench(args) => {
            let corpus = corpus_at(&args.model.corpus)?;
            let model = model_at(&args.model.model)?;
            let config = BenchConfig { k_percents: args.k_list, rounds: args.rounds, k_frames: args.k_frames, parallel };
            let reports = bench(&corpus, &model, &config)?;
            emit(&latency_csv(&reports), args.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
