//! `kae`: generate data, train, evaluate and check a Koopman autoencoder.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kae_core::dynamics::Scheme;
use kae_core::{ErrorClass, KaeError, Result};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "kae", version, about = "Continuous-time Koopman autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Integrator: training scheme for `train`, evaluated scheme for `eval`.
    #[arg(long, global = true, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    /// Relative tolerance of `gradcheck`.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate,
    /// Train a model and write a checkpoint with per-epoch metrics.
    Train,
    /// Per-step rollout error of a checkpoint on the test set.
    Eval,
    /// RK4 against the matrix exponential, and step-size alignment.
    CheckIntegrators,
    /// Finite-difference check of every parameter gradient.
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::CheckIntegrators => "check-integrators",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e: KaeError| e.to_string())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        if let Some(g) = &mut cfg.generator {
            g.set_seed(seed);
        }
        cfg.train.seed = seed;
        cfg.gradcheck.seed = seed;
    }
    if let Some(s) = cli.scheme {
        match cli.command {
            Command::Train => cfg.train.scheme = s,
            _ => cfg.eval.schemes = vec![s],
        }
    }
    if let Some(t) = cli.tolerance {
        cfg.gradcheck.tolerance = t;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    commands::dump_config(&cfg, cli.command.name())?;
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::CheckIntegrators => commands::check(&cfg),
        Command::Gradcheck => commands::grad(&cfg),
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
