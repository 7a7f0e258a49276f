//! `trunclab` command line.
//!
//! Exit codes: 0 success, 1 computation error, 2 usage error, 3 invalid
//! input or configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::*;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Invalid(String),
    Compute(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Compute(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Invalid(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Invalid(m) => write!(f, "invalid input: {m}"),
            Failure::Compute(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<trunclab::Error> for Failure {
    fn from(e: trunclab::Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Compute(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trunclab", version, about = "Truncation-sensitivity lab")]
struct Cli {
    /// TOML file with a [source] table and per-subcommand tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files; tables are always printed to stdout.
    #[arg(long, global = true, env = "TRUNCLAB_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Emit window-sweep records for a synthetic source.
    Simulate(SimulateArgs),
    /// Aggregate truncation curve of a synthetic source.
    Sweep(SweepArgs),
    /// Fit decay laws to a fixture or a measurement log.
    Fit(FitArgs),
    /// Cache-policy degradation on a synthetic source.
    Policy(PolicyArgs),
    /// Window size for a tolerance.
    Window(WindowArgs),
    /// Online window selection by exponential weights.
    Universal(UniversalArgs),
    /// Block-Markov Wyner–Ziv achievability sweep.
    Wz(WzArgs),
    /// Per-layer rate allocation by reverse water-filling.
    Alloc(AllocArgs),
    /// Block variances and deviation envelopes of dependent sequences.
    Martlab(MartArgs),
    /// Validate a measurement log.
    Ingest(IngestArgs),
    /// Fit every bundled fixture and compare with the reported values.
    Report(ReportArgs),
}

const SECTIONS: [&str; 11] =
    ["simulate", "sweep", "fit", "policy", "window", "universal", "wz", "alloc", "martlab", "ingest", "report"];

fn run(m: &ArgMatches) -> Result<(), Failure> {
    let cli = Cli::from_arg_matches(m).map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = match &cli.config {
        Some(p) => {
            let t = config::read(p)?;
            config::check_sections(&t, &SECTIONS)?;
            Some(t)
        }
        None => None,
    };
    let (name, sub) = m.subcommand().ok_or_else(|| Failure::Usage("missing subcommand".into()))?;
    let out = Out { dir: cli.out.clone() };
    let c = cfg.as_ref();
    match name {
        "simulate" => simulate(&config::resolve(name, sub, c)?, &out),
        "sweep" => sweep_cmd(&config::resolve(name, sub, c)?, &out),
        "fit" => fit_cmd(&config::resolve(name, sub, c)?, &out),
        "policy" => policy_cmd(&config::resolve(name, sub, c)?, &out),
        "window" => window_cmd(&config::resolve(name, sub, c)?, &out),
        "universal" => universal_cmd(&config::resolve(name, sub, c)?, &out),
        "wz" => wz_cmd(&config::resolve(name, sub, c)?, &out),
        "alloc" => alloc_cmd(&config::resolve(name, sub, c)?, &out),
        "martlab" => mart_cmd(&config::resolve(name, sub, c)?, &out),
        "ingest" => ingest_cmd(&config::resolve(name, sub, c)?, &out),
        "report" => report_cmd(&config::resolve(name, sub, c)?, &out),
        other => Err(Failure::Usage(format!("unknown subcommand {other}"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let m = match Cli::command().try_get_matches() {
        Ok(m) => m,
        // clap prints usage and exits 2 on errors, 0 for --help/--version.
        Err(e) => e.exit(),
    };
    match run(&m) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("trunclab: {f}");
            ExitCode::from(f.code())
        }
    }
}
