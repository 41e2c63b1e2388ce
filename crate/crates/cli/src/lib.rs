//! Command-line front end for the `otmm` solver.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;

use clap::Parser;

/// Parses `args` (program name first), runs the command and returns the exit code:
/// 0 on success, 2 for configuration errors and 3 for numerical failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            commands::exit_code(&e)
        }
    }
}
