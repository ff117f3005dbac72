use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ngd_core::harness::{
    consistency_report, emit_consistency_csv, emit_csv, emit_theory_csv, resolve_config,
    run_batch,
};

#[derive(Parser)]
#[command(name = "ngd", version, about = "Natural-gradient and rank-mu CMA-ES experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded multi-trial batch and write per-iteration statistics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the predicted condition-number curve and its rate bound.
    Theory {
        #[arg(long)]
        cond0: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare Monte-Carlo and closed-form natural gradients over a sample-size grid.
    Consistency {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = resolve_config(&config)?;
            let batch = run_batch(&cfg)?;
            emit_csv(&batch.rows, &out)?;
            let failed = batch.failed();
            if failed > 0 {
                eprintln!("{failed} of {} trials failed and were excluded:", cfg.trials);
                for t in batch.trials.iter().filter(|t| t.outcome.is_err()) {
                    if let Err(e) = &t.outcome {
                        eprintln!("  trial {} (seed {}): {e}", t.index, t.seed);
                    }
                }
            }
        }
        Command::Theory {
            cond0,
            alpha,
            iters,
            out,
        } => emit_theory_csv(cond0, alpha, iters, &out)?,
        Command::Consistency { config, out } => {
            let cfg = resolve_config(&config)?;
            let rows = consistency_report(&cfg)
                .with_context(|| format!("consistency report for {}", config.display()))?;
            emit_consistency_csv(&rows, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
