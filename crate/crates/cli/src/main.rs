//! `chronocon` command-line interface.
//!
//! All outputs are deterministic functions of the flags, the configuration
//! and the input files. `CHRONOCON_THREADS` caps the worker threads used for
//! bootstrap resampling and in-process parallel loops.

mod args;
mod commands;
mod context;
mod sweep;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use context::Context;

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("CHRONOCON_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| format!("CHRONOCON_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            return Err("CHRONOCON_THREADS must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Generate { out, truth } => commands::generate(&ctx, out, truth),
        Command::Pretrain { loss, dae, out } => commands::pretrain(&ctx, *loss, *dae, out),
        Command::Finetune {
            model,
            labeled_patients,
            out,
        } => commands::finetune(&ctx, model, *labeled_patients, out),
        Command::Predict {
            model,
            split,
            out,
            truth_out,
        } => commands::predict(&ctx, model, *split, out, truth_out),
        Command::Evaluate {
            pred,
            truth,
            pred_b,
            out,
        } => commands::evaluate(&ctx, pred, truth, pred_b, out),
        Command::Sweep(args) => sweep::sweep(&ctx, args),
        Command::SweepWorker(args) => sweep::worker(&ctx, args),
        Command::AnalyzeEmbeddings {
            model,
            score,
            split,
            out,
        } => commands::analyze_embeddings(&ctx, model, score, *split, out),
        Command::Report { sweep, analysis } => commands::report(&ctx, sweep, analysis),
        Command::Pairing { command } => commands::pairing(&ctx, command),
        Command::Loss { command } => commands::loss(&ctx, command),
        Command::Config => commands::show_config(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
