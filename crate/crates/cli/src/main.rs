mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use iclaudit::embedprobe::EmbedError;
use iclaudit::models::TrainError;
use iclaudit::probes::{ProbeError, PROBE_NAMES};
use iclaudit::scoring::ScoreError;
use iclaudit::seqcore::SeqError;

use crate::config::{RunConfig, SCORER_HELP};

/// Exit codes.
const EXIT_USAGE: u8 = 2;
const EXIT_CAPABILITY: u8 = 3;
const EXIT_SCORER: u8 = 4;
const EXIT_PARTIAL: u8 = 5;

/// Bad flags, config values or inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Capability mismatch, carrying the report printed before exiting.
#[derive(Debug)]
pub struct CapabilityError(pub String);

impl std::fmt::Display for CapabilityError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CapabilityError {}

#[derive(Parser)]
#[command(name = "iclaudit", version, about = "Audit in-context retrieval effects on sequence model likelihoods")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// TOML run config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, help = format!("Scorer: {SCORER_HELP}"))]
    scorer: Option<String>,
    /// Model server root for the remote scorer.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Model id sent to the remote scorer.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    alphabet: Option<String>,
    /// FASTA input; repeatable.
    #[arg(long, global = true)]
    corpus: Vec<PathBuf>,
    /// Random corpus: NxL or NxMIN-MAX.
    #[arg(long, global = true)]
    random: Option<String>,
    #[arg(long, global = true)]
    min_len: Option<usize>,
    #[arg(long, global = true)]
    max_len: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Without it the main CSV goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write quicklook SVG plots.
    #[arg(long, global = true)]
    emit_svg: bool,
    /// Cache root for remote responses and trained fixtures.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Arithmetic precision; only f64 is available.
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Runner parameter as key=value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pseudo-perplexity of every corpus sequence.
    Score {
        /// One unmasked pass per sequence instead of one query per position.
        #[arg(long)]
        ofs: bool,
    },
    /// Run one probe.
    Probe {
        #[arg(value_parser = PossibleValuesParser::new(PROBE_NAMES))]
        name: String,
    },
    /// Train a toy model from a named recipe and save a checkpoint.
    TrainToy {
        #[arg(long, default_value = "attention-icl", value_parser = PossibleValuesParser::new(iclaudit::models::Fixture::NAMES))]
        fixture: String,
        /// Override the recipe's step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Embedding-quality regression over multiplicity and control groups.
    EmbedRegress,
    /// Keep corpus sequences whose pseudo-perplexity exceeds a threshold.
    Filter {
        #[arg(long)]
        pppl_min: Option<f64>,
        /// Scores CSV with id and pppl columns; otherwise the corpus is scored.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
}

fn resolve(common: Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! take {
        ($($f:ident),*) => { $(if let Some(v) = common.$f { cfg.$f = v; })* };
    }
    macro_rules! take_opt {
        ($($f:ident),*) => { $(if common.$f.is_some() { cfg.$f = common.$f; })* };
    }
    take!(scorer, alphabet, precision);
    take_opt!(endpoint, model, random, min_len, max_len, seed, out, workers, cache_dir);
    if !common.corpus.is_empty() {
        cfg.corpus = common.corpus;
    }
    cfg.emit_svg |= common.emit_svg;
    for item in &common.set {
        let (k, v) = config::parse_set(item)?;
        cfg.params.insert(k, v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn score_code(e: &ScoreError) -> u8 {
    match e.root() {
        ScoreError::Capability(_) => EXIT_CAPABILITY,
        ScoreError::InvalidQuery(_) | ScoreError::Seq(_) => EXIT_USAGE,
        _ => EXIT_SCORER,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<SeqError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<CapabilityError>() {
            return EXIT_CAPABILITY;
        }
        if let Some(e) = cause.downcast_ref::<ScoreError>() {
            return score_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ProbeError>() {
            return match e {
                ProbeError::Config(_) | ProbeError::Seq(_) => EXIT_USAGE,
                ProbeError::Score(s) => score_code(s),
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<EmbedError>() {
            return match e {
                EmbedError::Config(_) | EmbedError::Seq(_) => EXIT_USAGE,
                EmbedError::Score(s) => score_code(s),
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config(_) | TrainError::EmptyCorpus => EXIT_USAGE,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(cli.common).and_then(|cfg| {
        let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
        commands::run(cli.command, &cfg, workers)
    });
    match result {
        Ok(commands::Outcome::Complete) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial(n)) => {
            eprintln!("warning: {n} rows were flagged; the report is partial");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
