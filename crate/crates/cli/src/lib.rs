//! Command-line front end: runs built-in problems, batch suites and
//! invariant checks, and writes iteration traces.

mod check;
mod config;
mod run;
mod trace;

pub use config::{parse_config, render, CliError, Mode, RunConfig};
pub use run::{exit_code, run_command, EXIT_INVALID_INPUT, EXIT_IO_FAILURE};
pub use trace::{emit_trace, format_summary, TraceFormat};
