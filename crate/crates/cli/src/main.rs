//! `npn`: generate noisy datasets, train, sweep loss weights, evaluate
//! checkpoints and inspect per-sample label state.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use npn_core::data::NoiseKind;
use npn_core::trainer::{DisambiguationMode, Method};

use crate::config::ExperimentConfig;
use crate::error::{exit_code, Invalid, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "npn", version, about = "Noisy-label learning experiments")]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, noise and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially (verification mode).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of reports printed to stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a blob dataset with label noise.
    GenData(GenDataArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train one model per (alpha, beta) cell.
    Sweep(SweepArgs),
    /// Test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Per-sample labels, histograms and candidate sets of a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    /// symmetric or asymmetric.
    #[arg(long)]
    noise: Option<NoiseKind>,
    #[arg(long)]
    rate: Option<f64>,
    /// Dataset directory (default: a fresh directory under the output root).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing dataset directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// hard or soft.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<DisambiguationMode>,
    /// npn or standard.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate for both phases.
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden layer widths, comma-separated (empty for a linear model).
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Output root (default: $NPN_OUT, else ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: TrainOverrides,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: TrainOverrides,
    /// Comma-separated alpha grid.
    #[arg(long)]
    alphas: Option<String>,
    /// Comma-separated beta grid.
    #[arg(long)]
    betas: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train-sample index to report.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "all")]
    index: Option<i64>,
    /// Report every train sample.
    #[arg(long)]
    all: bool,
}

fn parse_mode(s: &str) -> Result<DisambiguationMode, String> {
    match s {
        "hard" => Ok(DisambiguationMode::Hard),
        "soft" => Ok(DisambiguationMode::Soft),
        other => Err(format!("unknown mode `{other}` (expected hard or soft)")),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "npn" => Ok(Method::Npn),
        "standard" => Ok(Method::Standard),
        other => Err(format!("unknown method `{other}` (expected npn or standard)")),
    }
}

/// Comma-separated list; an empty string is an empty list.
pub fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|e| Invalid(format!("invalid {what} value `{v}`: {e}")).into())
        })
        .collect()
}

/// Defaults, then the config file, then global flags.
fn base_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn set_threads(threads: usize) -> anyhow::Result<()> {
    if threads == 0 {
        return Err(Invalid("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("configuring worker threads: {e}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = base_config(&cli)?;
    set_threads(cfg.threads)?;
    let format = cli.format;
    match cli.command {
        Command::GenData(args) => commands::gen_data(cfg, args, format),
        Command::Train(args) => commands::train(cfg, args, format),
        Command::Sweep(args) => commands::sweep(cfg, args, format),
        Command::Eval(args) => commands::eval(cfg, args, format),
        Command::Inspect(args) => commands::inspect(cfg, args, format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
