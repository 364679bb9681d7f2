//! Command-line parsing into a validated [`RunConfig`].

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qcbundle::{builtin_problem, ParamError, ProblemError, SolverParams, PARAM_KEYS};
use thiserror::Error;

use crate::run::EXIT_INVALID_INPUT;
use crate::trace::TraceFormat;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Clap(e) if !e.use_stderr() => 0,
            _ => EXIT_INVALID_INPUT,
        }
    }

    /// Prints the error (or the help text) and returns the exit code.
    pub fn report(&self) -> u8 {
        match self {
            CliError::Clap(e) => {
                let _ = e.print();
            }
            other => eprintln!("error: {other}"),
        }
        self.exit_code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    Suite,
    Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Built-in problem name; `None` for the suite.
    pub problem: Option<String>,
    /// Starting point; `None` uses the problem's default start.
    pub x0: Option<Vec<f64>>,
    pub params: SolverParams,
    /// Trace file, or the trace directory for the suite.
    pub trace: Option<PathBuf>,
    pub format: TraceFormat,
    pub verbose: bool,
    /// Seed of the randomized subproblem checks.
    pub seed: u64,
}

#[derive(Debug, Parser)]
#[command(name = "qcbundle", version, about = "Second order bundle method for nonsmooth constrained minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one built-in problem.
    Solve(ProblemArgs),
    /// Solve every built-in problem from its default start.
    Suite(CommonArgs),
    /// Solve one built-in problem and check the method's invariants.
    Check(ProblemArgs),
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Built-in problem name.
    #[arg(long)]
    problem: String,
    /// Starting point as comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Final optimality tolerance.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<f64>,
    /// Iteration limit.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Parameter override KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Trace output path (a directory for `suite`).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Trace format.
    #[arg(long, value_enum, default_value_t = TraceFormat::Jsonl)]
    format: TraceFormat,
    /// Print the iteration table.
    #[arg(long)]
    verbose: bool,
    /// Seed of the randomized checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_point(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Invalid(format!("cannot parse starting point `{text}`"));
    let x = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(bad())
    }
}

fn build_params(common: &CommonArgs) -> Result<SolverParams, CliError> {
    let mut params = SolverParams::default();
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Invalid(format!("override `{item}` is not KEY=VALUE")))?;
        params.set(key.trim(), value)?;
    }
    if let Some(eps) = common.eps {
        params.eps = eps;
    }
    if let Some(max_iter) = common.max_iter {
        params.max_iter = max_iter;
    }
    params.validate()?;
    Ok(params)
}

/// Parses and validates a command line (including the program name).
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (mode, problem_args, common) = match cli.command {
        Command::Solve(p) => (Mode::Solve, Some((p.problem, p.x0)), p.common),
        Command::Check(p) => (Mode::Check, Some((p.problem, p.x0)), p.common),
        Command::Suite(c) => (Mode::Suite, None, c),
    };
    let params = build_params(&common)?;
    let (problem, x0) = match problem_args {
        Some((name, x0)) => {
            let problem = builtin_problem(&name)?;
            let x0 = x0.as_deref().map(parse_point).transpose()?;
            if let Some(x) = &x0 {
                if x.len() != problem.dim() {
                    return Err(CliError::Invalid(format!(
                        "starting point has {} coordinates, problem `{name}` has dimension {}",
                        x.len(),
                        problem.dim()
                    )));
                }
            }
            (Some(name), x0)
        }
        None => (None, None),
    };
    Ok(RunConfig {
        mode,
        problem,
        x0,
        params,
        trace: common.trace,
        format: common.format,
        verbose: common.verbose,
        seed: common.seed,
    })
}

/// Command line that parses back to `config`.
pub fn render(config: &RunConfig) -> Vec<String> {
    let mut argv = vec!["qcbundle".to_string()];
    argv.push(
        match config.mode {
            Mode::Solve => "solve",
            Mode::Suite => "suite",
            Mode::Check => "check",
        }
        .to_string(),
    );
    if let Some(p) = &config.problem {
        argv.push(format!("--problem={p}"));
    }
    if let Some(x) = &config.x0 {
        let coords: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        argv.push(format!("--x0={}", coords.join(",")));
    }
    let defaults = SolverParams::default();
    for key in PARAM_KEYS {
        let value = config.params.get(key).expect("listed keys are valid");
        if value == defaults.get(key).expect("listed keys are valid") {
            continue;
        }
        if let Some(v) = value {
            argv.push(format!("--set={key}={v}"));
        }
    }
    if let Some(t) = &config.trace {
        argv.push(format!("--trace={}", t.display()));
    }
    argv.push(format!("--format={}", config.format.name()));
    if config.verbose {
        argv.push("--verbose".to_string());
    }
    argv.push(format!("--seed={}", config.seed));
    argv
}

#[cfg(test)]
mod tests {
    use super::*;
    use qcbundle::builtin_names;

    fn parse(args: &[&str]) -> Result<RunConfig, CliError> {
        parse_config(std::iter::once("qcbundle").chain(args.iter().copied()))
    }

    #[test]
    fn solve_with_defaults_elsewhere() {
        let c = parse(&["solve", "--problem", "maratos", "--x0", "1,2", "--eps", "1e-8"]).unwrap();
        assert_eq!(c.mode, Mode::Solve);
        assert_eq!(c.problem.as_deref(), Some("maratos"));
        assert_eq!(c.x0, Some(vec![1.0, 2.0]));
        assert_eq!(c.params, SolverParams::default());
        assert_eq!(c.format, TraceFormat::Jsonl);
    }

    #[test]
    fn out_of_range_override_is_rejected() {
        let err = parse(&["solve", "--problem", "maratos", "--x0", "1,2", "--set", "m_L=0.6"]).unwrap_err();
        assert!(matches!(err, CliError::Param(ParamError::OutOfRange { key: "m_L", .. })));
        assert_eq!(err.exit_code(), EXIT_INVALID_INPUT);
    }

    #[test]
    fn unknown_problem_lists_registry() {
        let err = parse(&["solve", "--problem", "nosuch"]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_INVALID_INPUT);
        let msg = err.to_string();
        for name in builtin_names() {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        for args in [
            vec!["solve", "--problem", "maratos", "--bogus"],
            vec!["solve", "--problem", "maratos", "--x0", "1,a"],
            vec!["solve", "--problem", "maratos", "--x0", "1,2,3"],
            vec!["solve", "--problem", "maratos", "--set", "nosuch=1"],
            vec!["solve", "--problem", "maratos", "--set", "m_L"],
            vec!["solve", "--problem", "maratos", "--format", "xml"],
            vec!["solve"],
            vec![],
        ] {
            let err = parse(&args).unwrap_err();
            assert_eq!(err.exit_code(), EXIT_INVALID_INPUT, "{args:?}");
        }
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(parse(&["--help"]).unwrap_err().exit_code(), 0);
    }

    #[test]
    fn negative_coordinates_and_flag_precedence() {
        let c = parse(&["check", "--problem", "maxq", "--x0", "-1.5,2", "--set", "eps=1e-3", "--eps", "1e-6"]).unwrap();
        assert_eq!(c.x0, Some(vec![-1.5, 2.0]));
        assert_eq!(c.params.eps, 1e-6);
    }

    #[test]
    fn render_examples() {
        let c = parse(&["suite", "--max-iter", "50", "--set", "M=7", "--verbose"]).unwrap();
        let argv = render(&c);
        assert!(argv.contains(&"--set=max_iter=50".to_string()));
        assert!(argv.contains(&"--set=M=7".to_string()));
        assert_eq!(parse_config(argv).unwrap(), c);
    }
}
