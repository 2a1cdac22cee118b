//! `nodecast` — command line frontend for the forecasting toolkit.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 unreadable or
//! malformed data/checkpoint files, 3 training divergence.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::Parser;
use nodecast_core::Error;

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => 3,
        Error::Load { .. } | Error::Checkpoint(_) | Error::Io(_) => 2,
        _ => 1,
    }
}
