mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Invalid, RunConfig};

/// Token-level factual inconsistency scoring for summaries.
#[derive(Parser, Debug)]
#[command(name = "pdiff", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set scoring.prompt_variant=entity`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Seed for every seeded component; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score document/summary pairs from JSONL.
    Score(commands::ScoreArgs),
    /// Score an annotated dataset and write a report with CSV tables.
    Evaluate(commands::EvaluateArgs),
    /// Train a prompt vector on word-labelled data.
    Tune(commands::TuneArgs),
    /// Build a report from previously written scores.
    Report(commands::ReportArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Score(args) => commands::score(cfg, args),
        Command::Evaluate(args) => commands::evaluate(cfg, args),
        Command::Tune(args) => commands::tune(cfg, args),
        Command::Report(args) => commands::report(cfg, args),
    }
}

/// 2 for configuration and validation failures, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 2;
    }
    match err.downcast_ref::<pdiff::Error>().map(pdiff::Error::root) {
        Some(
            pdiff::Error::Config(_)
            | pdiff::Error::Parse { .. }
            | pdiff::Error::Alignment { .. }
            | pdiff::Error::Capability(_)
            | pdiff::Error::Dimension { .. }
            | pdiff::Error::FingerprintMismatch { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
