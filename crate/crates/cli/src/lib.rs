//! Command-line front end: argument and config resolution, run directories
//! and the subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod run;

use std::ffi::OsString;

use chrono::Utc;

use args::Command;
use config::{ParseError, Resolved};
use run::RunDir;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

fn dispatch(r: &Resolved) -> rectiflow::Result<()> {
    let cmd = &r.cli.command;
    let run = RunDir::create(cmd.common(), Utc::now())?;
    run.write_record(&r.command, &r.settings)?;
    eprintln!("run directory: {}", run.path().display());
    match cmd {
        Command::Train(a) => commands::train::run(a, &run),
        Command::Sample(a) => commands::sample::run(a, &run),
        Command::Analyze(a) => commands::analyze::run(a, &run),
        Command::Bench(a) => commands::bench::run(a, &run),
        Command::Reproduce(a) => commands::reproduce::run(a, &run),
    }
}

/// Parses `argv`, runs the command and returns the process exit code:
/// 0 on success, 2 for usage or configuration errors, 1 for runtime faults.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let resolved = match config::parse(&argv) {
        Ok(r) => r,
        Err(ParseError::Clap(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(ParseError::Config(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    };
    match dispatch(&resolved) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
