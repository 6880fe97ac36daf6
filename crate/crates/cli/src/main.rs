//! Command-line front end for the calibration and segmentation pipeline.
//!
//! Exit codes: 0 success, 1 internal error (I/O failures, bugs), 2
//! user/input error (bad arguments, malformed files, insufficient data).

mod args;
mod commands;
mod inputs;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

pub enum CliError {
    /// Wrong invocation or unusable input: exit 2.
    Usage(String),
    /// Propagated library error; exit code depends on its class.
    Tool(lidar_reflect::Error),
}

impl CliError {
    pub fn usage(message: String) -> CliError {
        CliError::Usage(message)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Tool(e) if e.is_user_error() => 2,
            CliError::Tool(_) => 1,
        }
    }
}

impl From<lidar_reflect::Error> for CliError {
    fn from(e: lidar_reflect::Error) -> CliError {
        CliError::Tool(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Tool(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::FitAlpha(args) => commands::cmd_fit_alpha(args),
        Command::Profile(args) => commands::cmd_profile(args),
        Command::Segment(args) => commands::cmd_segment(args),
        Command::ConvertVelodyne(args) => commands::cmd_convert_velodyne(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
