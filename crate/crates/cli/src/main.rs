//! `mfm-nhpp`: simulate, fit, evaluate and benchmark MFM intensity models.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use crate::commands::{Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Numerical(_) => 3,
                _ => 2,
            })
        }
    }
}
