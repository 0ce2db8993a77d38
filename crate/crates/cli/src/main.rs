//! `evinterp`: generate synthetic event clips, train and evaluate the
//! interpolation network, and run it on single samples.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evinterp_core::Error;

use crate::config::RunConfig;

/// Failures mapped to exit codes: 1 usage, 2 data, 3 numeric.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 1,
            CliError::Core(Error::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "evinterp", version, about = "Event-assisted video frame interpolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `section.key = value` lines
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, as `--section.key value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into data.dir
    Simulate(#[command(flatten)] Common),
    /// Voxelize an event file and write the grids as JSON
    Voxelize {
        /// EVF1 event file
        events: PathBuf,
        /// Output path (default: next to the input with a .voxels.json suffix)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train on the train split of data.dir
    Train {
        /// Continue from the run directory's last checkpoint
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on one split and write a JSON report
    Eval {
        /// Checkpoint to evaluate (default: the run directory's best.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train, val or test
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Interpolate the middle frame of one sample directory
    Interpolate {
        /// Sample directory holding frame_*.png and events_*.evf
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory (default: inside the run directory)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the parameter count, the resolved configuration and a shape trace
    Inspect(#[command(flatten)] Common),
    /// Print the resolved configuration in canonical form
    Config(#[command(flatten)] Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.load()?),
        Command::Voxelize { events, out, common } => commands::voxelize(&common.load()?, &events, out),
        Command::Train { resume, common } => commands::train(&common.load()?, resume),
        Command::Eval {
            checkpoint,
            split,
            common,
        } => commands::eval(&common.load()?, checkpoint, &split),
        Command::Interpolate {
            sample,
            checkpoint,
            out,
            common,
        } => commands::interpolate(&common.load()?, &sample, checkpoint, out),
        Command::Inspect(c) => commands::inspect(&c.load()?),
        Command::Config(c) => {
            print!("{}", c.load()?.dump());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
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
