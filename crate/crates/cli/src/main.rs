mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iqpforge::verify::Level;

use crate::manifest::Run;

/// Train and check IQP-based generative models.
///
/// Exit codes: 0 success, 1 configuration or input error (also failed
/// `verify` checks), 2 training divergence, 3 qubit capacity exceeded.
#[derive(Parser, Debug)]
#[command(name = "iqpforge", version)]
pub struct Cli {
    /// JSON configuration file (`"schema": 1`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "IQPFORGE_WORKERS")]
    pub workers: Option<usize>,
    /// Directory for default outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a DQGM or QCBM model; the checkpoint is rewritten after every step.
    Train {
        /// Checkpoint path [default: <out-dir>/checkpoint.json].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss log CSV [default: <out-dir>/train_log.csv].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw shots from a trained model through the statevector oracle.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        shots: u64,
        /// Counts CSV [default: <out-dir>/counts.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampling-hardness diagnostics over random circuit ensembles.
    Diagnose,
    /// Contraction-complexity sweep over circuit families.
    Complexity {
        /// [default: <out-dir>/complexity.csv]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump an exact output distribution as `u64 n` followed by `2^n` f64,
    /// all little-endian.
    Oracle {
        /// Dump a trained model's sampling distribution instead of a
        /// configured circuit.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// [default: <out-dir>/probabilities.bin]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the cross-module consistency checks.
    Verify {
        #[arg(long, default_value = "quick")]
        level: Level,
        /// [default: <out-dir>/verify.json]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        tamper_rz_sign: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Diagnose => "diagnose",
            Command::Complexity { .. } => "complexity",
            Command::Oracle { .. } => "oracle",
            Command::Verify { .. } => "verify",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        match cause.downcast_ref::<iqpforge::Error>() {
            Some(iqpforge::Error::Divergence { .. }) => return 2,
            Some(iqpforge::Error::CapacityExceeded { .. }) => return 3,
            _ => {}
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut run = Run::start(cli.command.name(), cli.seed);
    let result = std::fs::create_dir_all(&cli.out_dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| configure_workers(cli.workers))
        .and_then(|_| commands::dispatch(&cli, &mut run));
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(e)
        }
    };
    if let Err(e) = run.finish(&cli.out_dir, code, result.err()) {
        eprintln!("error: could not write manifest: {e:#}");
    }
    ExitCode::from(code)
}

fn configure_workers(workers: Option<usize>) -> anyhow::Result<()> {
    if let Some(w) = workers {
        anyhow::ensure!(w > 0, "--workers must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    Ok(())
}
