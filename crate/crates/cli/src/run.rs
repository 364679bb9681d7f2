//! Command execution and exit codes.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use qcbundle::{builtin_names, builtin_problem, run, Problem, ProblemError, SolverError, SolverReport, SolverStatus};

use crate::check::{check_run, CheckLine};
use crate::config::{Mode, RunConfig};
use crate::trace::{emit_trace, format_summary, summary_line, write_records, TraceFormat};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVARIANT_VIOLATION: u8 = 1;
pub const EXIT_MAX_ITERATIONS: u8 = 2;
pub const EXIT_SOLVER_FAILURE: u8 = 3;
pub const EXIT_INVALID_INPUT: u8 = 4;
pub const EXIT_IO_FAILURE: u8 = 5;

/// Exit code of a finished run.
pub fn exit_code(status: SolverStatus) -> u8 {
    match status {
        SolverStatus::Converged => EXIT_OK,
        SolverStatus::MaxIterations => EXIT_MAX_ITERATIONS,
        SolverStatus::LineSearchFailure | SolverStatus::SubproblemFailure => EXIT_SOLVER_FAILURE,
        SolverStatus::OracleFailure => EXIT_IO_FAILURE,
    }
}

fn error_code(err: &SolverError) -> u8 {
    match err {
        SolverError::Problem(ProblemError::OracleFailure { .. }) => EXIT_IO_FAILURE,
        _ => EXIT_INVALID_INPUT,
    }
}

fn start_point(problem: &Problem, x0: Option<&Vec<f64>>) -> Result<DVector<f64>, String> {
    match x0 {
        Some(x) => Ok(DVector::from_column_slice(x)),
        None => problem
            .default_start()
            .cloned()
            .ok_or_else(|| format!("problem `{}` has no default start; pass --x0", problem.name())),
    }
}

/// Runs the configured command, writing human-readable output to `out`.
/// Returns the process exit code; errors are reported on stderr.
pub fn run_command(config: &RunConfig, out: &mut impl Write) -> u8 {
    match config.mode {
        Mode::Solve => solve(config, out, false),
        Mode::Check => solve(config, out, true),
        Mode::Suite => suite(config, out),
    }
}

fn write_trace(config: &RunConfig, report: &SolverReport, path: &Path) -> u8 {
    match emit_trace(&report.records, path, config.format) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: cannot write trace {}: {e}", path.display());
            EXIT_IO_FAILURE
        }
    }
}

fn solve(config: &RunConfig, out: &mut impl Write, check: bool) -> u8 {
    let name = config.problem.as_deref().unwrap_or_default();
    let problem = match builtin_problem(name) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID_INPUT;
        }
    };
    let x1 = match start_point(&problem, config.x0.as_ref()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID_INPUT;
        }
    };
    let (result, lines) = if check {
        let (result, lines) = check_run(&problem, &config.params, &x1, config.seed);
        (result, Some(lines))
    } else {
        (run(&problem, &config.params, &x1), None)
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return error_code(&e);
        }
    };
    let mut code = exit_code(report.status);
    let _ = write!(out, "{}", format_summary(name, &report));
    if config.verbose {
        let _ = write_records(&report.records, TraceFormat::Text, out);
    }
    if let Some(lines) = lines {
        for CheckLine { name, passed, detail } in &lines {
            let _ = writeln!(out, "{} {name}: {detail}", if *passed { "PASS" } else { "FAIL" });
        }
        if code == EXIT_OK && lines.iter().any(|l| !l.passed) {
            code = EXIT_INVARIANT_VIOLATION;
        }
    }
    if let Some(path) = &config.trace {
        let trace_code = write_trace(config, &report, path);
        if trace_code != EXIT_OK {
            return trace_code;
        }
    }
    code
}

fn suite(config: &RunConfig, out: &mut impl Write) -> u8 {
    if let Some(dir) = &config.trace {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: cannot create trace directory {}: {e}", dir.display());
            return EXIT_IO_FAILURE;
        }
    }
    let results: Vec<(&str, Result<SolverReport, String>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = builtin_names()
            .iter()
            .map(|&name| {
                scope.spawn(move || {
                    let problem = builtin_problem(name).map_err(|e| e.to_string())?;
                    let x1 = start_point(&problem, None)?;
                    run(&problem, &config.params, &x1).map_err(|e| e.to_string())
                })
            })
            .collect();
        builtin_names()
            .iter()
            .copied()
            .zip(handles)
            .map(|(name, h)| (name, h.join().unwrap_or_else(|_| Err("solver panicked".to_string()))))
            .collect()
    });
    let mut code = EXIT_OK;
    for (name, result) in &results {
        match result {
            Ok(report) => {
                let _ = writeln!(out, "{}", summary_line(name, report));
                code = code.max(exit_code(report.status));
                if let Some(dir) = &config.trace {
                    let path = dir.join(format!("{name}.{}", config.format.extension()));
                    code = code.max(write_trace(config, report, &path));
                }
            }
            Err(e) => {
                eprintln!("error: {name}: {e}");
                code = code.max(EXIT_INVALID_INPUT);
            }
        }
    }
    code
}
