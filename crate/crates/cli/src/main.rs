//! `proxy-anchor` command-line front end. Each verb parses its options,
//! calls one library operation and prints the result.
//!
//! Exit codes: 0 on success, 1 when the library rejects the input, 2 on
//! usage errors (unknown verb or flag, missing or malformed options).

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Failure of a CLI invocation, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(proxy_anchor::Error),
}

impl From<proxy_anchor::Error> for CliError {
    fn from(e: proxy_anchor::Error) -> Self {
        CliError::Domain(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Domain(err) => eprintln!("error: {err}"),
            }
            ExitCode::from(e.code())
        }
    }
}
