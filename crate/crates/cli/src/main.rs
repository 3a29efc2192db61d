mod bridge;
mod config;
mod error;
mod eval;
mod io;
mod pipeline;
mod selfimit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use distill_core::critic::DEFAULT_DELTA;
use distill_core::decoder::DecoderConfig;
use distill_core::lm::{DEFAULT_DISCOUNT, DEFAULT_ORDER};
use distill_core::prompts::DEFAULT_PPL_THRESHOLD;

use config::{pick, PipelineConfig};
use error::{CliError, ErrorKind, Result};

/// Generate, filter and distill short generic statements with a constrained
/// n-gram generator, a trainable critic and iterative self-imitation.
#[derive(Debug, Parser)]
#[command(name = "distill", version)]
struct Cli {
    /// TOML configuration shared by all subcommands. Flags given on the
    /// command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log filter for the JSON log lines on stderr, e.g. info or distill_core=debug.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    /// Worker threads for decoding.
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an n-gram language model on a text corpus, one sentence per line.
    FitLm(FitLmArgs),
    /// Expand concepts into gated, constrained prompt jobs.
    ExpandPrompts(ExpandArgs),
    /// Run constrained beam search over a jobs file.
    Decode(DecodeArgs),
    /// Train the logistic-regression critic on labeled statements.
    TrainCritic(TrainCriticArgs),
    /// Keep generations the critic scores above delta.
    Filter(FilterArgs),
    /// Run the self-imitation loop.
    Selfimit(SelfimitArgs),
    /// Precision-recall curve and average precision of scored, labeled items.
    EvalPr(EvalPrArgs),
    /// Fraction of items labeled valid, per system.
    EvalAccuracy(EvalAccuracyArgs),
    /// Mark-and-recapture estimate of distinct statements per concept.
    EvalMnr(EvalMnrArgs),
    /// Check that an external scorer reproduces in-process decoding exactly.
    BridgeCheck(BridgeCheckArgs),
    /// Serve a model over the scorer protocol on stdin and stdout.
    #[command(hide = true)]
    BridgeServe(BridgeServeArgs),
    /// Write the synthetic benchmark's corpus, jobs, initial model and labels.
    Synthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct DecoderArgs {
    /// Beam width.
    #[arg(long, default_value_t = DecoderConfig::default().beam_size)]
    pub beam: usize,
    /// Generations returned per job.
    #[arg(long, default_value_t = DecoderConfig::default().num_returns)]
    pub returns: usize,
    /// Maximum generated tokens, end marker excluded.
    #[arg(long, default_value_t = DecoderConfig::default().max_len)]
    pub max_len: usize,
    /// Minimum generated tokens before the end marker may be chosen.
    #[arg(long, default_value_t = DecoderConfig::default().min_len)]
    pub min_len: usize,
    /// Exponent of the length normalization.
    #[arg(long, default_value_t = DecoderConfig::default().length_penalty)]
    pub length_penalty: f64,
    /// Penalty per violated constraint clause.
    #[arg(long, default_value_t = DecoderConfig::default().lambda)]
    pub lambda: f64,
    /// Spread beam slots across clause-satisfaction patterns.
    #[arg(long)]
    pub diversity_bucketing: bool,
}

impl DecoderArgs {
    pub fn resolve(&self, m: &ArgMatches, cfg: &PipelineConfig, base: DecoderConfig) -> Result<DecoderConfig> {
        let d = &cfg.decoder;
        let pick_or = |id: &str, flag, from_cfg: Option<usize>, from_base| {
            if config::explicit(m, id) {
                flag
            } else {
                from_cfg.unwrap_or(from_base)
            }
        };
        let pick_f = |id: &str, flag, from_cfg: Option<f64>, from_base| {
            if config::explicit(m, id) {
                flag
            } else {
                from_cfg.unwrap_or(from_base)
            }
        };
        let out = DecoderConfig {
            beam_size: pick_or("beam", self.beam, d.beam_size, base.beam_size),
            num_returns: pick_or("returns", self.returns, d.num_returns, base.num_returns),
            max_len: pick_or("max_len", self.max_len, d.max_len, base.max_len),
            min_len: pick_or("min_len", self.min_len, d.min_len, base.min_len),
            length_penalty: pick_f("length_penalty", self.length_penalty, d.length_penalty, base.length_penalty),
            lambda: pick_f("lambda", self.lambda, d.lambda, base.lambda),
            diversity_bucketing: self.diversity_bucketing
                || d.diversity_bucketing.unwrap_or(base.diversity_bucketing),
        };
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Args)]
pub struct FitLmArgs {
    /// Training sentences, one per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the model.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    /// Absolute discount subtracted from every observed count.
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    pub discount: f64,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// Concepts TSV: surface, kind (noun_phrase or goal), source.
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Relational phrases, one per line. Defaults to the built-in list.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// Related-concept pairs TSV: concept, related.
    #[arg(long)]
    pub related: Option<PathBuf>,
    /// Relations for concepts sourced from conceptnet, one per line.
    #[arg(long)]
    pub conceptnet_relations: Option<PathBuf>,
    /// Language model used to pick and gate prompt variants.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Prompts with per-word perplexity above this are dropped.
    #[arg(long, default_value_t = DEFAULT_PPL_THRESHOLD)]
    pub ppl_threshold: f64,
    /// Replacement function-word list.
    #[arg(long)]
    pub function_words: Option<PathBuf>,
    /// Replacement connective list.
    #[arg(long)]
    pub connective_words: Option<PathBuf>,
    /// Also forbid a naive plural/singular variant of the concept.
    #[arg(long)]
    pub forbid_variants: bool,
    /// Jobs output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// N-gram model written by fit-lm.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Jobs, one JSON object per line; stdin when omitted.
    #[arg(long)]
    pub jobs: Option<PathBuf>,
    /// Generations output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Args)]
pub struct TrainCriticArgs {
    /// Labeled TSV: text, label (valid or invalid).
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the critic.
    #[arg(long)]
    pub out: PathBuf,
    /// L2 regularization strength.
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 3000)]
    pub max_iters: usize,
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
    /// Feature hash space is 2^buckets_log2.
    #[arg(long, default_value_t = 18)]
    pub buckets_log2: u32,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Critic written by train-critic.
    #[arg(long)]
    pub critic: Option<PathBuf>,
    /// Generations, one JSON object per line; stdin when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Generations output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep generations scoring strictly above this.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct SelfimitArgs {
    /// Run on the built-in synthetic benchmark with its grammar oracle as
    /// critic. Also enabled by a [synthetic] table in the config.
    #[arg(long)]
    pub synthetic: bool,
    /// Initial generator.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Jobs, one JSON object per line.
    #[arg(long)]
    pub jobs: Option<PathBuf>,
    /// Critic for the first iteration.
    #[arg(long)]
    pub critic: Option<PathBuf>,
    /// Labeled TSV used to retrain the critic before the next iteration.
    /// Repeat for later iterations; each retrain uses all files so far.
    #[arg(long)]
    pub retrain_data: Vec<PathBuf>,
    /// Run directory; overrides DISTILL_RUN_DIR and the config.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub iterations: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Weight of the accepted statements' counts when fine-tuning.
    #[arg(long, default_value_t = 1.0)]
    pub mix_weight: f64,
    /// Keep repeated statements in the fine-tuning set.
    #[arg(long)]
    pub no_dedup: bool,
    /// Benchmark seed in synthetic mode; recorded in every report.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PrFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalPrArgs {
    /// Items, one JSON object per line with text, score, label, system.
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long, value_enum, default_value_t = PrFormat::Table)]
    pub format: PrFormat,
    /// Report output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalAccuracyArgs {
    /// Items, one JSON object per line with text, score, label, system.
    #[arg(long)]
    pub items: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalMnrArgs {
    /// Items with text and concept, one JSON object per line. Generation
    /// lines are grouped by prompt.
    #[arg(long)]
    pub items: PathBuf,
    /// Fraction of each concept's generations drawn per capture.
    #[arg(long, default_value_t = 0.30)]
    pub capture: f64,
    /// BLEU above which a second-capture item counts as recaptured.
    #[arg(long, default_value_t = 0.85)]
    pub bleu_threshold: f64,
    /// Number of repetitions, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// First sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BridgeCheckArgs {
    /// Connect to a bridge listening on this TCP address instead of
    /// spawning one.
    #[arg(long)]
    pub connect: Option<String>,
    /// Reference model: `test-model` for the dyadic conformance model, or
    /// an n-gram model file.
    #[arg(long, default_value = "test-model")]
    pub reference: String,
    /// Jobs to decode both ways; a built-in set when omitted.
    #[arg(long)]
    pub jobs: Option<PathBuf>,
    /// Seconds to wait for each response.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    /// Logprob requests timed after the comparison.
    #[arg(long, default_value_t = 100)]
    pub latency_calls: usize,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    /// Bridge command line, after `--`.
    #[arg(last = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BridgeServeArgs {
    /// Serve this n-gram model instead of the dyadic test model.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Benchmark seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub struct Context {
    pub config: PipelineConfig,
    pub parallelism: usize,
}

fn init_logging(level: &str) -> Result<()> {
    let filter = tracing_subscriber::EnvFilter::try_new(level)
        .map_err(|e| CliError::new(ErrorKind::Usage, format!("bad --log-level {level:?}: {e}")))?;
    tracing_subscriber::fmt().json().with_env_filter(filter).with_writer(std::io::stderr).init();
    Ok(())
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<()> {
    init_logging(&cli.log_level)?;
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let parallelism = pick(sub, "parallelism", cli.parallelism, config.parallelism);
    if parallelism == 0 {
        return Err(CliError::config("parallelism must be at least 1"));
    }
    let ctx = Context { config, parallelism };
    match cli.command {
        Command::FitLm(a) => pipeline::fit_lm(&a),
        Command::ExpandPrompts(a) => pipeline::expand_prompts(&a, sub, &ctx),
        Command::Decode(a) => pipeline::decode(&a, sub, &ctx),
        Command::TrainCritic(a) => pipeline::train_critic(&a),
        Command::Filter(a) => pipeline::filter(&a, sub, &ctx),
        Command::Selfimit(a) => selfimit::run(&a, sub, &ctx),
        Command::EvalPr(a) => eval::pr(&a),
        Command::EvalAccuracy(a) => eval::accuracy(&a),
        Command::EvalMnr(a) => eval::mnr(&a, sub, &ctx),
        Command::BridgeCheck(a) => bridge::check(&a, sub, &ctx),
        Command::BridgeServe(a) => bridge::serve(&a),
        Command::Synthetic(a) => pipeline::synthetic(&a),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::new(ErrorKind::Usage, e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.kind.code());
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches come from the same definition");
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.kind.code())
        }
    }
}
