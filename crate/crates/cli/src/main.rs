//! `brt`: synthesize bursts, align them, restore them with the unrolled
//! solver, train the proximal network and score results.

mod burst_io;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use commands::{align, evaluate, restore, synthesize, train, Status};

#[derive(Parser)]
#[command(name = "brt", version, about = "Burst restoration with a learned proximal network")]
struct Cli {
    /// TOML or JSON config with the same keys as the flags; flags win. A
    /// run manifest from an earlier invocation also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic training or test bursts to disk.
    Synthesize(synthesize::SynthesizeArgs),
    /// Estimate frame warps for a burst.
    Align(align::AlignArgs),
    /// Restore a burst, optionally sweeping the burst size.
    Restore(restore::RestoreArgs),
    /// Train the proximal network on a synthesized dataset.
    Train(train::TrainArgs),
    /// PSNR of predictions against ground truth.
    Evaluate(evaluate::EvaluateArgs),
}

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_DEGRADED: u8 = 3;

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("BRT_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("BRT_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("BRT_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Synthesize(a) => synthesize::run(config, a),
        Command::Align(a) => align::run(config, a),
        Command::Restore(a) => restore::run(config, a),
        Command::Train(a) => train::run(config, a),
        Command::Evaluate(a) => evaluate::run(config, a),
    });
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::AlignmentDegraded) => ExitCode::from(EXIT_DEGRADED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_BAD_INPUT)
        }
    }
}
