use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod bench;
mod commands;

/// Sparse image approximation and encrypted image folding.
#[derive(Debug, Parser)]
#[command(name = "sceif", version, about)]
struct Cli {
    /// Worker threads for per-block work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
struct QualityArgs {
    /// Target PSNR of the approximation, in dB.
    #[arg(long, default_value_t = 43.0)]
    psnr: f64,
    /// Block side in pixels.
    #[arg(long, default_value_t = 8)]
    block: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Approximate an image and write the approximation.
    Approx {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        quality: QualityArgs,
    },
    /// Approximate an image and fold it into an encrypted 16-bit container.
    Fold {
        input: PathBuf,
        output: PathBuf,
        /// Private key (decimal).
        #[arg(long)]
        key: u64,
        /// Public seed; defaults to one derived from the clock.
        #[arg(long)]
        seed: Option<u32>,
        #[command(flatten)]
        quality: QualityArgs,
    },
    /// Recover the approximation from a container.
    Unfold {
        input: PathBuf,
        output: PathBuf,
        /// Private key (decimal).
        #[arg(long)]
        key: u64,
    },
    /// Compare two images.
    Metrics { reference: PathBuf, test: PathBuf },
    /// Approximate with thresholded block DCT for comparison.
    BaselineDct {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        quality: QualityArgs,
    },
    /// Time approximation, folding and unfolding over a directory of PGM/PPM files.
    Bench {
        corpus: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1_234_567_890)]
        key: u64,
        #[arg(long)]
        seed: Option<u32>,
        #[command(flatten)]
        quality: QualityArgs,
    },
}

fn configure_threads(threads: usize) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        eprintln!("note: built without the parallel feature, --threads ignored");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads(cli.threads)?;
    let exec = commands::execution(cli.threads);
    match cli.command {
        Command::Approx { input, output, quality } => commands::approx(&input, &output, quality, exec),
        Command::Fold { input, output, key, seed, quality } => {
            commands::fold(&input, &output, key, commands::seed_or_clock(seed), quality, exec)
        }
        Command::Unfold { input, output, key } => commands::unfold(&input, &output, key, exec),
        Command::Metrics { reference, test } => commands::metrics(&reference, &test),
        Command::BaselineDct { input, output, quality } => commands::baseline_dct(&input, &output, quality, exec),
        Command::Bench { corpus, csv, key, seed, quality } => {
            bench::run(&corpus, csv.as_deref(), key, commands::seed_or_clock(seed), quality, exec)
        }
    }
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
