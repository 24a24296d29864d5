//! `svdq`: quantize linear layers, evaluate packs, compare schemes, dump
//! spectra, sweep ranks, and estimate kernel-plan costs.
//!
//! Results go to stdout (or `--out`); diagnostics go to stderr. Exit codes:
//! 0 success, 1 data error, 2 usage error.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "svdq", version, about = "Low-bit linear-layer quantization with a 16-bit low-rank branch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Smoothing flags shared by the pipeline-driving subcommands.
#[derive(Args, Debug)]
struct SmoothingArgs {
    /// Fixed migration strength in [0, 1].
    #[arg(long, conflicts_with_all = ["alpha_grid", "no_smooth"])]
    alpha: Option<f64>,

    /// Grid-search the migration strength; optionally a comma list of
    /// values (default grid: 0.00, 0.05, ..., 1.00).
    #[arg(long, num_args = 0..=1, default_missing_value = "", conflicts_with = "no_smooth")]
    alpha_grid: Option<String>,

    /// Disable smoothing entirely (all factors 1).
    #[arg(long)]
    no_smooth: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a weight matrix into a layer pack.
    Quantize {
        /// Weight tensor file (m x n).
        #[arg(long)]
        weights: PathBuf,
        /// Calibration activations (b x m). Synthesized from --seed when
        /// omitted.
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Config bundle: int4, nvfp4, int8, or nf4-w4a16.
        #[arg(long)]
        preset: String,
        /// Low-rank branch rank (preset default when omitted).
        #[arg(long)]
        rank: Option<usize>,
        #[command(flatten)]
        smoothing: SmoothingArgs,
        /// Refinement iterations.
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Quantize the residual with Hessian error compensation.
        #[arg(long)]
        gptq: bool,
        /// GPTQ damping as a fraction of the mean Hessian diagonal.
        #[arg(long, default_value_t = 0.01)]
        damping: f64,
        /// Seed for synthesized calibration data.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output pack directory.
        #[arg(long)]
        out: PathBuf,
    },

    /// Evaluate a saved pack on a calibration batch.
    Eval {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Original weights; without them the report only measures
        /// activation quantization against the pack's own weights.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Run the six-scheme comparison ladder and emit CSV.
    Compare {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        preset: String,
        #[arg(long)]
        rank: Option<usize>,
        #[command(flatten)]
        smoothing: SmoothingArgs,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Emit the singular spectra of W, the smoothed weight, and the
    /// residual as CSV.
    Spectrum {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        preset: String,
        #[arg(long)]
        rank: Option<usize>,
        #[command(flatten)]
        smoothing: SmoothingArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Quantize at several ranks and emit relative error and parameter
    /// overhead per rank as CSV.
    Ranksweep {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        preset: String,
        /// Comma-separated ranks, e.g. 16,32,64.
        #[arg(long)]
        ranks: String,
        #[command(flatten)]
        smoothing: SmoothingArgs,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long)]
        gptq: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Roofline traffic and latency for the fused and unfused plans.
    Costmodel {
        /// Layer shape as tokens,in,out (e.g. 4096,3072,3072).
        #[arg(long)]
        shape: String,
        #[arg(long)]
        rank: usize,
        /// JSON file overriding the built-in hardware model.
        #[arg(long)]
        hw: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Fold a LoRA adapter into a pack's low-rank branch.
    LoraFuse {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        lora_a: PathBuf,
        #[arg(long)]
        lora_b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Run the acceptance suite; exit 0 only if every check passes.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
