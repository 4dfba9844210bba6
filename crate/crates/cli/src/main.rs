use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use estd3_cli::{parse_config, report, run_experiment, ExperimentSummary, OutputOptions};
use estd3_core::{Ablation, RunConfig};

#[derive(Parser)]
#[command(name = "estd3", version, about = "ES + TD3 hybrid trainer")]
struct Cli {
    /// Log per-iteration progress (-v) or per-generation detail (-vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full hybrid for every seed.
    Run(RunArgs),
    /// Train one of the degenerate variants (full, td3_only, es_only, single_buffer).
    Ablate {
        mode: Ablation,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Recompute summary.toml from the curve files in a directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(short, long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(short, long, default_value = "runs")]
    out: PathBuf,
    /// Add window-10 smoothed evaluation columns to the curves.
    #[arg(long)]
    smooth: bool,
    /// Write the per-generation ES trace next to each curve.
    #[arg(long)]
    trace: bool,
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    Ok(match &args.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    })
}

fn execute(config: RunConfig, args: &RunArgs) -> Result<ExperimentSummary> {
    let opts = OutputOptions {
        smoothed: args.smooth,
        trace: args.trace,
    };
    run_experiment(&config, &args.seeds, &args.out, opts)
}

fn print_summary(s: &ExperimentSummary) {
    for score in &s.scores {
        println!("seed {:>4}  final {:.4}", score.seed, score.final_score);
    }
    for f in &s.failures {
        println!("seed {:>4}  FAILED: {}", f.seed, f.error);
    }
    println!(
        "mean {:.4}  std {:.4}  median {:.4}  ({} of {} seeds completed)",
        s.mean,
        s.std,
        s.median,
        s.scores.len(),
        s.scores.len() + s.failures.len()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Run(args) => load(args).and_then(|c| execute(c, args)),
        Command::Ablate { mode, run } => load(run).and_then(|c| execute(c.with_ablation(*mode), run)),
        Command::Report { dir } => report(dir),
    };
    match result {
        Ok(summary) => {
            print_summary(&summary);
            if summary.all_completed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
