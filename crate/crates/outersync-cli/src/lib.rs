//! Command-line front end. The binary is a thin wrapper around
//! [`run_command`], which parses the arguments and dispatches to the
//! subcommands in [`commands`]. Keeping the entry point a library function
//! lets the integration tests drive it without spawning a process.

pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::Parser;

pub use commands::Cli;

/// Parse `argv` and run the selected subcommand. Returns the process exit
/// code: 0 on success, 1 on a runtime error (printed to stderr), 2 on a
/// usage error (clap's own convention).
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap routes --help/--version to stdout and real usage errors
            // to stderr on its own
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
