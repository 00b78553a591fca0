//! Library half of the `hsic` command-line tool.
//!
//! Exit status is 0 on success. On failure one JSON object
//! `{"error": <category>, "message": ...}` is written to stderr and the status
//! is the category's code (see [`CliError::exit_code`]).

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod output;

pub use error::{CliError, CliResult};

use args::{Cli, Command};

/// Caps the global thread pool from `HSIC_THREADS` when it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HSIC_THREADS") else {
        return Ok(());
    };
    let n: usize = match v.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => {
            return Err(error::config_error(format!(
                "HSIC_THREADS must be a positive integer, got '{v}'"
            )))
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))
}

/// Executes a parsed command and returns what should go to stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Test(a) => commands::cmd_test(a),
        Command::Power(a) => commands::cmd_sweep(a, false),
        Command::Bench(a) => commands::cmd_sweep(a, true),
    }
}
