//! Command-line front end for `convbss`: simulate, separate, reconstruct and
//! evaluate, with files in between.

pub mod commands;
pub mod config;
pub mod io;

use anyhow::{Context, Result};
use clap::Parser;
use convbss::BssError;

use config::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONVERGENCE: i32 = 2;

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => commands::cmd_simulate(&args.resolve()?),
        Command::Separate(args) => commands::cmd_separate(&args.resolve()?),
        Command::Reconstruct(args) => commands::cmd_reconstruct(&args.resolve()?, &args.outputs, &args.observations),
        Command::Evaluate(args) => {
            commands::cmd_evaluate(&args.resolve()?, &args.outputs, &args.truths, args.max_lag)
        }
    }
}

pub fn exit_code(error: &anyhow::Error) -> i32 {
    let convergence = error.chain().any(|e| {
        e.is::<commands::Unconverged>() || matches!(e.downcast_ref::<BssError>(), Some(BssError::ExtractionFailure { .. }))
    });
    if convergence {
        EXIT_CONVERGENCE
    } else {
        EXIT_USAGE
    }
}

/// `CONVBSS_THREADS` caps the worker pool.
fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("CONVBSS_THREADS") {
        let threads: usize = value.parse().with_context(|| format!("CONVBSS_THREADS=`{value}` is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return EXIT_USAGE;
    }
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
