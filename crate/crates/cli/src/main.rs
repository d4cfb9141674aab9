//! `interp-robust`: train, attack, evaluate and visualize interpretability-aware
//! robust CNNs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O or file-format error,
//! 3 numeric failure (divergence, too few successful attacks, ...).

mod config;
mod pgm;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use interp_robust::error::Error;

use config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Idx(_) | Error::Checkpoint(_) => 2,
            Error::NonFinite(_) | Error::TooFewSamples { .. } | Error::AttackFailed(_) | Error::Hypothesis(_) => 3,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "interp-robust", version, about = "Interpretability-aware adversarial robustness experiments")]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `out_dir` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train a network; writes model.ckpt and metrics.csv.
    Train,
    /// Attack test points with PGD, ISA or AAI; writes attack.csv.
    Attack,
    /// Run evaluation sweeps; writes one CSV per sweep.
    Eval,
    /// Maximize a penultimate channel's activation; writes a PGM image.
    Visualize,
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("missing --config PATH"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.set("seed", s);
    }
    let out = match &cli.out {
        Some(o) => o.clone(),
        None if cfg.has("out_dir") => cfg.path("out_dir")?,
        None => return Err(CliError::config("missing output directory (`out_dir` or --out)")),
    };
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
    match cli.command {
        Command::Train => run::train(&cfg, &out),
        Command::Attack => run::attack(&cfg, &out),
        Command::Eval => run::eval(&cfg, &out),
        Command::Visualize => run::visualize(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
