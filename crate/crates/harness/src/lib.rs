//! Experiment orchestration for `romrec`: desk-scale phase transitions,
//! condition-number sweeps, timing sweeps and the statistical probes.
//! Every CSV opens with `# seed=` and `# config=` lines that replay it.

pub mod cli;
pub mod experiments;
pub mod grid;

use std::ffi::OsString;
use std::fs;
use std::io::Write;

use clap::Parser;
use romrec_core::Error;

use cli::{Cli, Command};
use experiments::{ExperimentSpec, Kind, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_PROBE: i32 = 3;

/// Bad arguments and configurations are usage errors; files that cannot be
/// read, parsed or validated are IO/format errors.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Validation(_) => EXIT_IO,
        Error::InvalidArgument(_) | Error::Config(_) | Error::Dimension(_) | Error::Empty(_) => EXIT_USAGE,
    }
}

pub fn execute(command: &Command) -> romrec_core::Result<Report> {
    let args = command.args();
    let kind = match command {
        Command::Run(_) => Kind::Run,
        Command::Phase(_) => Kind::Phase,
        Command::Condnum(_) => Kind::Condnum,
        Command::Scaling(_) => Kind::Scaling,
        Command::Probes(_) => Kind::Probes,
    };
    let spec = ExperimentSpec::from_args(kind, args)?;
    match kind {
        Kind::Run => experiments::cmd_run(&spec, args),
        Kind::Phase => experiments::cmd_phase(&spec),
        Kind::Condnum => experiments::cmd_condnum(&spec),
        Kind::Scaling => experiments::cmd_scaling(&spec),
        Kind::Probes => experiments::cmd_probes(&spec),
    }
}

/// Parses `argv`, runs the command, writes the CSV and returns the exit
/// code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let report = match execute(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("romrec: {e}");
            return exit_code(&e);
        }
    };
    let written = match &cli.command.args().out {
        Some(path) => fs::write(path, &report.csv),
        None => std::io::stdout().lock().write_all(report.csv.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("romrec: {e}");
        return EXIT_IO;
    }
    for note in &report.notes {
        eprintln!("{note}");
    }
    if report.probe_failed {
        EXIT_PROBE
    } else {
        EXIT_OK
    }
}
