//! Command-line front end for mixsched experiments.
//!
//! Each subcommand reads one JSON config, runs to completion, and writes
//! CSV/JSON/SVG results into `--out`. Exit codes: 0 success, 1 runtime
//! failure (including a failed `moe-check`), 2 invalid config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod report;
pub mod svg;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(path: &str, err: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{path}: {err}"))
    }

    pub fn runtime(err: impl std::fmt::Display) -> Self {
        CliError::Runtime(err.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<mixsched::Error> for CliError {
    fn from(e: mixsched::Error) -> Self {
        // Configs are validated up front, so anything the library rejects
        // later is a runtime failure.
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixsched", version, about = "Dynamic data-mixture scheduling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run several strategies on several seeds and tabulate final scores.
    Compare(RunArgs),
    /// Score a grid of fixed mixtures and report the best ones.
    Sweep(RunArgs),
    /// One schedule on the synthetic dynamics.
    Simulate(RunArgs),
    /// One schedule on the restoration testbed.
    Train(RunArgs),
    /// Invariant and gradient suite for the mixture-of-experts layer.
    MoeCheck(MoeCheckArgs),
    /// Print the JSON schema of a config or output document.
    Schema {
        /// Document name; lists the available names when omitted.
        name: Option<String>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Added to every seed in the config.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub seed_offset: i64,
    /// Suppress progress messages.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MoeCheckArgs {
    /// JSON config file; built-in sizes when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Negative control: route with unnormalized weights.
    #[arg(long, hide = true)]
    pub inject_broken_router: bool,
}

impl CommonArgs {
    pub fn seed(&self, s: u64) -> u64 {
        s.wrapping_add_signed(self.seed_offset)
    }

    pub fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Compare(a) => commands::compare::run(&config::load(&a.config)?, &a.common),
        Command::Sweep(a) => commands::sweep::run(&config::load(&a.config)?, &a.common),
        Command::Simulate(a) => commands::simulate::run(&config::load(&a.config)?, &a.common),
        Command::Train(a) => commands::train::run(&config::load(&a.config)?, &a.common),
        Command::MoeCheck(a) => {
            let cfg = match &a.config {
                Some(p) => config::load(p)?,
                None => config::MoeCheckConfig::default(),
            };
            commands::moe_check::run(&cfg, &a.common, a.inject_broken_router)
        }
        Command::Schema { name } => {
            let all = config::schemas();
            match name {
                None => {
                    for (n, _) in &all {
                        println!("{n}");
                    }
                    Ok(())
                }
                Some(name) => {
                    let (_, schema) = all
                        .iter()
                        .find(|(n, _)| *n == name)
                        .ok_or_else(|| CliError::Config(format!("unknown schema {name:?}")))?;
                    println!("{}", serde_json::to_string_pretty(schema).map_err(CliError::runtime)?);
                    Ok(())
                }
            }
        }
    }
}

/// Parses arguments, runs, and maps the outcome to the exit-code contract.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
