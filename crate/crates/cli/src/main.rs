//! `confill`: generate toy data, train the denoiser, calibrate, complete
//! images and run benchmarks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "confill", version, about = "Context-adaptive diffusion image completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; falls back to CONFILL_SEED, then the config, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a procedural toy dataset as PGM files plus a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Comma-separated pattern kinds (gradient, stripes, checker, blobs, rings).
        #[arg(long)]
        kinds: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the noise predictor and write a checkpoint.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Complete the unknown region of one image.
    Inpaint {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// confill_cad, confill_wd, confill_l2 or blend.
        #[arg(long, default_value = "confill_cad")]
        method: String,
        /// Per-step trace as tab-separated text.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Unclamped-to-mask clean-image estimate.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Calibrated variance table; calibrated on the input when absent.
        #[arg(long)]
        gamma: Option<PathBuf>,
        /// External per-pixel features (CFEAT).
        #[arg(long)]
        external: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep images x mask kinds x methods and write a CSV report.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated methods; empty for a header-only report.
        #[arg(long, default_value = "confill_cad,confill_wd,confill_l2,blend")]
        methods: String,
        /// Comma-separated mask kinds.
        #[arg(long, default_value = "half_vertical")]
        masks: String,
        /// Use only the first N images.
        #[arg(long)]
        count: Option<usize>,
        /// Variance table used by every guided method.
        #[arg(long)]
        gamma: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Record wall-clock milliseconds (makes the CSV run-dependent).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate the per-step variance table and write it as JSON.
    Calibrate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "confill_cad")]
        method: String,
        #[command(flatten)]
        common: Common,
    },
    /// Dump per-cell weight, variance, edge density and sample-count maps.
    Features {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        external: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
