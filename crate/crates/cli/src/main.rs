//! `momentum-lab`: config-driven experiment runner.
//!
//! Exit status: 0 on success, 2 on validation or I/O errors, 3 on numerical errors.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use momentum_lab::Error;

use crate::config::{config_hash, ExperimentConfig};
use crate::output::{Manifest, OutputDir};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Usage(_) | Error::Admissibility(_) => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "momentum-lab", version, about = "Experiments on the continuous-time theory of SGD with momentum")]
struct Cli {
    /// Experiment configuration (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "MOMENTUM_LAB_THREADS")]
    threads: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Critical points, separating saddles and the barrier pairing.
    Morse,
    /// Closed-form escape rates over the (s, alpha) grid.
    Rates,
    /// Optimizer or SDE ensembles with excess-risk fits.
    Simulate,
    /// Smallest eigenvalues of the discretized Kramers operator.
    Spectral,
    /// Hypocoercivity certificate search.
    Certify,
    /// Regenerate a reference table.
    Reproduce {
        #[arg(value_enum)]
        target: Target,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Target {
    Figure3,
    Section32,
    RatioDemo,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let (name, hash, seed, default_out, report) = match &cli.command {
        Command::Reproduce { target } => {
            let name = format!("reproduce-{target:?}").to_lowercase();
            let hash = config_hash(&name);
            let report = match target {
                Target::Figure3 => commands::figure3(&hash)?,
                Target::Section32 => commands::section32(&hash)?,
                Target::RatioDemo => commands::ratio_demo(&hash)?,
            };
            (name, hash, cli.seed.unwrap_or(0), None, report)
        }
        cmd => {
            let path = cli.config.as_ref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let hash = cfg.hash();
            let (name, report) = match cmd {
                Command::Morse => ("morse", commands::morse(&cfg, &hash)?),
                Command::Rates => ("rates", commands::rates(&cfg, &hash)?),
                Command::Simulate => ("simulate", commands::simulate(&cfg, &hash)?),
                Command::Spectral => ("spectral", commands::spectral(&cfg, &hash)?),
                Command::Certify => ("certify", commands::certify(&cfg, &hash)?),
                Command::Reproduce { .. } => unreachable!(),
            };
            (name.to_string(), hash, cfg.seed, cfg.out.clone(), report)
        }
    };
    let dir = cli.out.clone().or(default_out.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutputDir::create(&dir)?;
    for t in &report.tables {
        out.write_table(t)?;
        log::info!("wrote {} rows to {}/{}.csv", t.len(), dir.display(), t.name);
    }
    out.finish(Manifest {
        subcommand: name,
        config_hash: hash,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: Vec::new(),
    })?;
    if !cli.quiet {
        let mut stdout = std::io::stdout().lock();
        for line in &report.summary {
            if writeln!(stdout, "{line}").is_err() {
                break;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: invalid thread count {n}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
