//! Batch front-end for the `fwdcurve` library: `simulate`, `check` and `compare` subcommands
//! driven by a JSON run configuration.

pub mod commands;
pub mod config;
mod output;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Format, Overrides, RunConfig};

/// Failure classes with fixed exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(String),
    Runtime(String),
    Check(String),
    Coupling(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Check(_) => 4,
            Failure::Coupling(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
            Failure::Check(m) => write!(f, "check failed: {m}"),
            Failure::Coupling(m) => write!(f, "comparison refused: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "fwdcurve", version, about = "Forward-curve SPDE simulation and projection checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a curve ensemble and write curves, summary and the resolved config.
    Simulate(CommonArgs),
    /// Run the point-wise condition checkers on the configured model.
    Check(CommonArgs),
    /// Compare projected curves with the fixed-maturity SDE and run dt-halving sweeps.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            dt: self.dt,
            out: self.out.clone(),
            format: self.format,
        }
    }
}

/// Worker count from `FWDCURVE_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("FWDCURVE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Config(format!("FWDCURVE_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = thread_cap().and_then(|cap| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cap {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Failure::Runtime(e.to_string()))?;
        pool.install(|| match &cli.command {
            Command::Simulate(a) => commands::simulate(&a.config, &a.overrides()),
            Command::Check(a) => commands::check(&a.config, &a.overrides()),
            Command::Compare(a) => commands::compare(&a.config, &a.overrides()),
        })
    });
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("fwdcurve: {f}");
            f.exit_code()
        }
    }
}
