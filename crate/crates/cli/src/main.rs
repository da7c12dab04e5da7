//! `flexihorizon`: generate synthetic data, label optimal horizons, train and
//! evaluate the baselines and the adaptive-horizon model.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 missing or
//! incompatible artifact. Diagnostics go to stderr, data to stdout.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flexihorizon::Error;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "flexihorizon", version, about = "Adaptive-horizon trajectory prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration (sections: run, synthdata, trajgeo, fdk,
    /// scoring, fsn, nnet).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; dataset, split, initialization and shuffle seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated horizon classes.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    It,
    Ir,
    Fsn,
    Apm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSONL (gzip when the name ends in .gz).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every agent with its optimal horizon.
    Label {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `horizon_{f}.ckpt` fixed-horizon models.
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoints: Option<PathBuf>,
        /// Use noise-corrupted ground truth as the fixed-horizon predictor.
        #[arg(long)]
        oracle: bool,
        /// Oracle noise at the last future step, in meters.
        #[arg(long, default_value_t = 3.0)]
        oracle_growth: f64,
        /// Score kernel: fdk, frechet, ade or fde.
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a protocol and write checkpoints, logs, metrics and a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Dataset JSONL; generated from the configuration when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        kernel: Option<String>,
        /// Label with noise-corrupted ground truth of this growth instead of
        /// the fixed-horizon models.
        #[arg(long)]
        oracle_growth: Option<f64>,
        /// Longest-horizon baseline checkpoint (apm protocol).
        #[arg(long)]
        base: Option<PathBuf>,
        /// Label file (apm protocol).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or the ground-truth oracle) and write a CSV report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "oracle_growth")]
        checkpoint: Option<PathBuf>,
        /// Evaluate noise-corrupted ground truth instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle_growth: Option<f64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Method name in the report (defaults by model kind).
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Per-horizon metric table for plotting.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Print exact discrete Fréchet and the smooth kernel for two trajectories.
    Frechet {
        /// Text file with one `x,y` (or `x y`) point per line.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Score-kernel × distillation ablation.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            horizons: self.horizons.clone(),
            ..Overrides::default()
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact { .. } | Error::Checkpoint(_) => 3,
        _ => 2,
    }
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("FLEXIHORIZON_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("FLEXIHORIZON_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Resource(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads()?;
    match cli.command {
        Command::Generate { common, n, out } => {
            let over = Overrides { n, ..common.overrides() };
            commands::generate(common.config.as_deref(), &over, &out)
        }
        Command::Label {
            common,
            data,
            checkpoints,
            oracle,
            oracle_growth,
            kernel,
            out,
        } => {
            let over = Overrides {
                kernel,
                oracle_growth: oracle.then_some(oracle_growth),
                ..common.overrides()
            };
            commands::label(common.config.as_deref(), &over, &data, checkpoints.as_deref(), &out)
        }
        Command::Train {
            common,
            protocol,
            data,
            n,
            epochs,
            lambda,
            kernel,
            oracle_growth,
            base,
            labels,
            out,
        } => {
            let over = Overrides {
                n,
                epochs,
                lambda,
                kernel,
                oracle_growth,
                ..common.overrides()
            };
            let p = match protocol {
                Protocol::It => commands::Protocol::It,
                Protocol::Ir => commands::Protocol::Ir,
                Protocol::Fsn => commands::Protocol::Fsn,
                Protocol::Apm => commands::Protocol::Apm {
                    base: base.ok_or_else(|| Error::Config("--protocol apm needs --base".into()))?,
                    labels: labels.ok_or_else(|| Error::Config("--protocol apm needs --labels".into()))?,
                },
            };
            commands::train(common.config.as_deref(), &over, p, data.as_deref(), &out)
        }
        Command::Eval {
            common,
            checkpoint,
            oracle_growth,
            data,
            split,
            method,
            out,
            plot,
        } => {
            let split = match split {
                SplitArg::Train => commands::Split::Train,
                SplitArg::Val => commands::Split::Val,
                SplitArg::All => commands::Split::All,
            };
            let source = match (checkpoint, oracle_growth) {
                (Some(c), _) => commands::EvalSource::Checkpoint(c),
                (None, Some(g)) => commands::EvalSource::Oracle(g),
                (None, None) => return Err(Error::Config("eval needs --checkpoint or --oracle-growth".into())),
            };
            commands::eval(common.config.as_deref(), &common.overrides(), source, &data, split, method, &out, plot.as_deref())
        }
        Command::Frechet { a, b, beta, gamma, delta } => commands::frechet(&a, &b, beta, gamma, delta),
        Command::Ablate {
            common,
            data,
            n,
            epochs,
            out,
        } => {
            let over = Overrides {
                n,
                epochs,
                ..common.overrides()
            };
            commands::ablate(common.config.as_deref(), &over, data.as_deref(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
