//! The `relex-sef` command line: `train`, `eval`, `synth` and
//! `filter-report`.
//!
//! Exit codes are 0 on success, 1 when a command fails at runtime and 2 for
//! usage errors. The worker count comes from `RELEX_SEF_WORKERS`.

mod args;
mod commands;
mod manifest;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command, EvalArgs, FilterReportArgs, SynthArgs, TeacherChoice, TrainArgs};
pub use manifest::{sha256_file, InputDigest, RunManifest};

use commands::CliError;

pub const WORKERS_ENV: &str = "RELEX_SEF_WORKERS";
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses the process arguments and runs the command.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    if let Err(msg) = configure_workers() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    let outcome = match cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Synth(a) => commands::cmd_synth(a),
        Command::FilterReport(a) => commands::cmd_filter_report(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV}={raw:?} is not a positive integer"))?;
    // a second call in the same process finds the pool already built
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
