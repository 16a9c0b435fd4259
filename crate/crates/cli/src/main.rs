//! `lora-capacity`: batch front end for the capacity model, optimizer and
//! simulator.
//!
//! Exit codes: 0 ok, 1 I/O, 2 parse, 3 validation, 4 non-convergence or a
//! numerical failure, 5 simulation assertion.

mod commands;
mod config;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lora_capacity::optimize::Configuration;
use lora_capacity::Error;

use crate::config::Loaded;
use crate::sweep::Axis;

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;
pub const EXIT_SIMULATION: u8 = 5;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Model(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Model(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Io(_) => EXIT_IO,
            Self::Model(e) => match e {
                Error::Parse(_) => EXIT_PARSE,
                Error::Validation(_) => EXIT_VALIDATION,
                Error::NotConverged { .. }
                | Error::NonFinite { .. }
                | Error::Consistency(_)
                | Error::UndefinedDelay
                | Error::ZeroFairness => EXIT_NOT_CONVERGED,
                Error::Simulation(_) => EXIT_SIMULATION,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(m) => write!(f, "I/O error: {m}"),
            Self::Model(e) => e.fmt(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Comma-separated table with a `#` header.
    Csv,
    /// Pretty-printed JSON document.
    Doc,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (TOML). Missing keys take EU868 defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lambda_total=2` or `--set simulation.n_devices=600`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output file (default stdout).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Simulator seed (overrides `simulation.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep points, grid points and replications.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one scenario and print every metric.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Include the full steady state in the document.
        #[arg(long)]
        full: bool,
    },
    /// Solve a scenario over a range of one key, optionally for several values of another.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key to sweep, e.g. `lambda_total`.
        #[arg(long, default_value = "lambda_total")]
        axis: String,
        /// `v1,v2,...`, `log:a:b:n` or `lin:a:b:n`.
        #[arg(long)]
        values: String,
        /// Outer axis as `key=v1,v2,...`.
        #[arg(long)]
        by: Option<String>,
        /// Comma list of output columns.
        #[arg(long, default_value = commands::DEFAULT_OUTPUTS)]
        outputs: String,
        /// Start from a named configuration row (C1, C2, C3).
        #[arg(long)]
        configuration: Option<String>,
    },
    /// Run the event-driven simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write a per-event CSV trace to this file.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Search SF distributions and (m, h) for the best objective value.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Solve and simulate the same scenario and tabulate the differences.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Parser, Debug)]
#[command(name = "lora-capacity", version, about = "Capacity model and simulator for single-gateway LoRaWAN cells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let common = match &cli.command {
        Command::Solve { common, .. }
        | Command::Sweep { common, .. }
        | Command::Simulate { common, .. }
        | Command::Optimize { common }
        | Command::Compare { common } => common,
    };
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::Validation("--workers must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let loaded = Loaded::read(common.config.as_deref(), &common.set)?;

    // validate everything before creating the output file
    let code = match &cli.command {
        Command::Solve { full, .. } => {
            let mut out = output::open(common.out.as_deref())?;
            let c = commands::solve_cmd(&loaded, common.format.unwrap_or(Format::Doc), *full, &mut *out)?;
            out.flush().map_err(output::io_err)?;
            c
        }
        Command::Sweep {
            axis,
            values,
            by,
            outputs,
            configuration,
            ..
        } => {
            let axis = Axis::parse(axis, values)?;
            let by = by.as_deref().map(Axis::parse_assignment).transpose()?;
            let configuration = configuration.as_deref().map(Configuration::parse).transpose()?;
            commands::output_columns(outputs)?;
            let args = commands::SweepArgs {
                axis: &axis,
                by: by.as_ref(),
                outputs,
                configuration,
            };
            let mut out = output::open(common.out.as_deref())?;
            let c = commands::sweep_cmd(&loaded, common.format.unwrap_or(Format::Csv), &args, &mut *out)?;
            out.flush().map_err(output::io_err)?;
            c
        }
        Command::Simulate { trace, .. } => {
            loaded.sim_config(common.seed)?;
            let mut out = output::open(common.out.as_deref())?;
            let c = commands::simulate_cmd(
                &loaded,
                common.format.unwrap_or(Format::Csv),
                common.seed,
                trace.as_deref(),
                &mut *out,
            )?;
            out.flush().map_err(output::io_err)?;
            c
        }
        Command::Optimize { .. } => {
            loaded.problem()?;
            let mut out = output::open(common.out.as_deref())?;
            let c = commands::optimize_cmd(&loaded, common.format.unwrap_or(Format::Doc), &mut *out)?;
            out.flush().map_err(output::io_err)?;
            c
        }
        Command::Compare { .. } => {
            loaded.sim_config(common.seed)?;
            let mut out = output::open(common.out.as_deref())?;
            let c = commands::compare_cmd(&loaded, common.format.unwrap_or(Format::Csv), common.seed, &mut *out)?;
            out.flush().map_err(output::io_err)?;
            c
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("lora-capacity: {e}");
            ExitCode::from(e.code())
        }
    }
}
