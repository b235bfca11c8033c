//! `qkrige`: quality-weighted kriging of heterogeneous weather stations.
//!
//! Subcommands cover the full pipeline: `synth` generates a labelled
//! synthetic scenario, `train` learns per-station quality scores,
//! `predict` interpolates one time slice onto a grid, and `evaluate`
//! cross-validates the competing quality parametrizations.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{Level, LevelFilter, Metadata, Record};

use qkrige::dataio::DataError;
use qkrige::evaluate::EvalError;
use qkrige::evolve::EvolveError;
use qkrige::geo::DomainError;
use qkrige::gpr::GprError;
use qkrige::grid::GridError;
use qkrige::kernel::KernelError;

use crate::config::{ModelChoice, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 1.
    Usage(String),
    /// Missing or malformed input data; exit code 2.
    Data(String),
    /// Numerical failure during model fitting; exit code 3.
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GprError> for CliError {
    fn from(e: GprError) -> Self {
        match e {
            GprError::Kernel(k) => CliError::from(k),
            GprError::EmptyTrainingSet => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<EvolveError> for CliError {
    fn from(e: EvolveError) -> Self {
        match e {
            EvolveError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            EvolveError::Gpr(g) => CliError::from(g),
            EvolveError::Domain(d) => CliError::from(d),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gpr(g) => CliError::from(g),
            EvalError::Evolve(v) => CliError::from(v),
            EvalError::Domain(d) => CliError::from(d),
            EvalError::BadFoldCount { .. }
            | EvalError::BadBinWidth(_)
            | EvalError::NoEvalSlices
            | EvalError::NoTrainSlices => CliError::Usage(e.to_string()),
            EvalError::EmptyErrors => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "qkrige", version, about = "Quality-weighted kriging of weather station data")]
struct Cli {
    /// Path to a key = value run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario with known ground truth.
    Synth,
    /// Learn per-station quality scores with the evolutionary algorithm.
    Train,
    /// Interpolate one time slice onto a regular grid.
    Predict {
        /// Quality parametrization: baseline, naive_fusion, a_priori or learned.
        #[arg(long)]
        model: Option<String>,
        /// Time slice to interpolate.
        #[arg(long)]
        slice: Option<u32>,
        /// Path to learned qualities (model = learned).
        #[arg(long)]
        qualities: Option<PathBuf>,
    },
    /// Cross-validate the quality parametrizations against reference stations.
    Evaluate,
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Warn
    }

    fn log(&self, record: &Record) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level().to_string().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Command::Predict { model, slice, qualities } = &cli.command {
        if let Some(model) = model {
            config.model = model.parse::<ModelChoice>().map_err(CliError::Usage)?;
        }
        if let Some(slice) = slice {
            config.slice = *slice;
        }
        if let Some(qualities) = qualities {
            config.qualities = Some(qualities.clone());
        }
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&config),
        Command::Train => commands::cmd_train(&config),
        Command::Predict { .. } => commands::cmd_predict(&config),
        Command::Evaluate => commands::cmd_evaluate(&config),
    }
}

fn main() -> ExitCode {
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(LevelFilter::Warn);

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
