//! `respcast`: command-line driver for the response-forecasting pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use respcast::zeroshot::ZeroShotMode;

use crate::config::RunConfig;

const OVERRIDE_HELP: &str = "\
Any key of the run configuration can be set as --<section>.<key>=<value>,
e.g. --train.epochs=50 or --paths.graph=out/graph.json. Values are TOML
literals; bare words are taken as strings. Flags beat the --config file.
Sections: paths, train, hgt, synth, client, ablation, graph, embed, persona,
zeroshot.";

#[derive(Debug, Parser)]
#[command(name = "respcast", version, about = "Forecast responses to news on belief-augmented social graphs", after_help = OVERRIDE_HELP)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; overrides train.seed and synth.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world into paths.data_dir.
    #[command(after_help = OVERRIDE_HELP)]
    Synth,
    /// Extract latent personas for every user.
    #[command(after_help = OVERRIDE_HELP)]
    Personas(PersonasArgs),
    /// Build the heterogeneous graph from the dataset and personas.
    #[command(name = "build-graph", after_help = OVERRIDE_HELP)]
    BuildGraph,
    /// Initialize node embeddings for the graph.
    #[command(after_help = OVERRIDE_HELP)]
    Embed,
    /// Train the graph model; writes the checkpoint and history.
    #[command(after_help = OVERRIDE_HELP)]
    Train,
    /// Score a trained checkpoint.
    #[command(after_help = OVERRIDE_HELP)]
    Eval(EvalArgs),
    /// Forecast with a language model and no training.
    #[command(after_help = OVERRIDE_HELP)]
    Zeroshot(ZeroshotArgs),
    /// Graph statistics and the distant-shared-belief ratio.
    #[command(after_help = OVERRIDE_HELP)]
    Stats,
}

#[derive(Debug, Args)]
pub struct PersonasArgs {
    /// Use the deterministic offline client.
    #[arg(long)]
    pub mock: bool,
    /// Worker threads for extraction.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Add the lurker-subset report.
    #[arg(long)]
    pub lurkers: bool,
    /// Add the unseen-user report.
    #[arg(long)]
    pub unseen: bool,
    /// Add per-belief reports.
    #[arg(long = "by-belief")]
    pub by_belief: bool,
    /// Evaluate the dev split instead of test.
    #[arg(long)]
    pub dev: bool,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[arg(long, default_value = "social")]
    pub mode: ZeroShotMode,
    /// Neighbors summarized in social mode; overrides zeroshot.k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Use the deterministic offline client.
    #[arg(long)]
    pub mock: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] respcast::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Core(e) => e.kind(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let (argv, overrides) = config::split_overrides(argv);
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let mut config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
        config.train.seed = seed;
        config.synth.seed = seed;
    }
    match cli.command {
        Command::Synth => commands::synth(&config),
        Command::Personas(a) => commands::personas(&config, &a),
        Command::BuildGraph => commands::build_graph(&config),
        Command::Embed => commands::embed(&config),
        Command::Train => commands::train(&config),
        Command::Eval(a) => commands::eval(&config, &a),
        Command::Zeroshot(a) => commands::zeroshot(&config, &a),
        Command::Stats => commands::stats(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string().replace('\n', " ")});
            eprintln!("{line}");
            ExitCode::from(e.code())
        }
    }
}
