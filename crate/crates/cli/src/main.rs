//! Command-line entry point: dataset synthesis, training, evaluation,
//! segmentation export, gradient checking, and parameter sweeps.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "lrcnet", version, about = "Point-cloud feature learning toolkit")]
struct Cli {
    /// Worker threads (default: available cores; env LRCNET_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonOpts {
    /// Run seed. A value in the config file overrides this default;
    /// passing the flag explicitly overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "./runs")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a labeled synthetic dataset with train/test manifests and a
    /// ready-to-run config file.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Clouds per shape kind in the training split.
        #[arg(long, default_value_t = 50)]
        per_class_train: usize,
        /// Clouds per shape kind in the test split.
        #[arg(long, default_value_t = 20)]
        per_class_test: usize,
        /// Points per cloud.
        #[arg(long, default_value_t = 256)]
        points: usize,
        /// Gaussian noise sigma added to every coordinate.
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        /// Generate the part-labeled segmentation corpus instead of the
        /// four-class classification corpus.
        #[arg(long)]
        seg: bool,
    },
    /// Train from a config file; writes checkpoint and metric log.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on its configured test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Predict per-point labels for XYZ files and write labeled copies.
    Segment {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        ckpt: PathBuf,
        /// Input .xyz files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Finite-difference gradient verification on the tiny configuration.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a preset grid of configurations and print the ranked table.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        config: PathBuf,
        /// Grid preset: gamma, m, scales, filters, intra, or inter.
        #[arg(long)]
        grid: String,
    },
}

/// Errors split by exit code: usage problems exit 2, runtime failures 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

fn init_threads(requested: Option<usize>) {
    let n = requested.or_else(|| {
        std::env::var("LRCNET_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    let result = match cli.command {
        Command::Synth {
            common,
            per_class_train,
            per_class_test,
            points,
            noise,
            seg,
        } => commands::synth(&common, per_class_train, per_class_test, points, noise, seg),
        Command::Train { common, config } => commands::train(&common, &config),
        Command::Eval { ckpt } => commands::eval(&ckpt),
        Command::Segment {
            common,
            ckpt,
            inputs,
        } => commands::segment(&common, &ckpt, &inputs),
        Command::Gradcheck { seed } => commands::gradcheck(seed.unwrap_or(7)),
        Command::Sweep {
            common,
            config,
            grid,
        } => commands::sweep(&common, &config, &grid),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
