//! Experiment runner: config-driven pre-training, semi-supervised training,
//! verification, evaluation and figure emission.

mod commands;
mod config;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sud2", about = "Denoiser-supervised semi-supervised image reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train a supervising denoiser (autoencoder or diffusion model).
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the semi-supervised training loop from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run analytic verification suites and write a consolidated report.
    Verify {
        /// One of: theorems, tweedie, theorem1, mode-shift, kl, all.
        #[arg(long, default_value = "theorems")]
        suite: String,
        /// Smoothing noise level plumbed into the checks.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Evaluation points per check.
        #[arg(long)]
        points: Option<usize>,
        /// Mixture file overriding the standard configurations.
        #[arg(long)]
        gmm: Option<PathBuf>,
        /// Report file destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a reconstruction checkpoint on a dataset directory.
    Eval {
        /// Checkpoint directory, or `identity` for the no-op baseline.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        /// Per-image CSV destination (summary lands beside it).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Second checkpoint for a delta table.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Render loss and diagnostic charts from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    // Thread-count override for the numeric backend.
    if let Ok(threads) = std::env::var("SUD2_THREADS") {
        if !threads.is_empty() && std::env::var("RAYON_NUM_THREADS").is_err() {
            std::env::set_var("RAYON_NUM_THREADS", threads);
        }
    }

    let cli = Cli::parse();
    let result: Result<u8, sud2_core::Error> = match cli.command {
        Command::Pretrain { config } => commands::cmd_pretrain(&config).map(|_| 0),
        Command::Train { config } => commands::cmd_train(&config).map(|_| 0),
        Command::Verify {
            suite,
            sigma,
            seed,
            points,
            gmm,
            out,
        } => commands::cmd_verify(&commands::VerifyArgs {
            suite,
            sigma,
            seed,
            points,
            gmm_path: gmm,
            out,
        })
        .map(|reports| if reports.iter().all(|r| r.pass) { 0 } else { 1 }),
        Command::Eval {
            checkpoint,
            dataset,
            channels,
            out,
            compare,
        } => commands::cmd_eval(&commands::EvalArgs {
            checkpoint,
            dataset,
            channels,
            out,
            compare,
        })
        .map(|_| 0),
        Command::Plot { metrics, out } => commands::cmd_plot(&metrics, &out).map(|_| 0),
    };

    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code_of(&err))
        }
    }
}
