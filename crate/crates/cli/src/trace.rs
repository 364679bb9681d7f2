//! Iteration traces and run summaries.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use qcbundle::{IterationRecord, SolverReport, StepKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    /// Aligned columns of k, f, F, w and the step kind.
    Text,
    /// One JSON object per iteration.
    Jsonl,
}

impl TraceFormat {
    pub fn name(self) -> &'static str {
        match self {
            TraceFormat::Text => "text",
            TraceFormat::Jsonl => "jsonl",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Text => "txt",
            TraceFormat::Jsonl => "jsonl",
        }
    }
}

fn step_name(kind: Option<StepKind>) -> &'static str {
    match kind {
        Some(StepKind::Serious) => "serious",
        Some(StepKind::ShortNullObjective) => "null_objective",
        Some(StepKind::ShortNullConstraint) => "null_constraint",
        None => "-",
    }
}

/// Writes the iteration table in `format` to `out`.
pub fn write_records(records: &[IterationRecord], format: TraceFormat, out: &mut impl Write) -> io::Result<()> {
    match format {
        TraceFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut *out, r)?;
                writeln!(out)?;
            }
        }
        TraceFormat::Text => {
            if !records.is_empty() {
                writeln!(out, "{:>6} {:>14} {:>14} {:>12}  step", "k", "f", "F", "w")?;
            }
            for r in records {
                writeln!(
                    out,
                    "{:>6} {:>14.6e} {:>14.6e} {:>12.4e}  {}",
                    r.k,
                    r.f,
                    r.cons,
                    r.w,
                    step_name(r.step_kind)
                )?;
            }
        }
    }
    Ok(())
}

/// Writes the trace file; an empty record list gives an empty file.
pub fn emit_trace(records: &[IterationRecord], path: &Path, format: TraceFormat) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_records(records, format, &mut out)?;
    out.flush()
}

fn status_name(report: &SolverReport) -> String {
    format!("{:?}", report.status)
}

/// Multi-line summary: status, final point, f, F, w, iterations and the
/// stationarity residual.
pub fn format_summary(name: &str, report: &SolverReport) -> String {
    let x: Vec<String> = report.x.iter().map(|v| format!("{v:.10e}")).collect();
    let mut s = format!(
        "problem:    {name}\nstatus:     {}\nx:          [{}]\nf:          {:.10e}\nF:          {:.10e}\nw:          {:.4e}\niterations: {}\nresidual:   {:.4e}\n",
        status_name(report),
        x.join(", "),
        report.f,
        report.cons,
        report.w,
        report.iterations,
        report.stationarity_residual,
    );
    if let Some(m) = &report.message {
        s.push_str(&format!("message:    {m}\n"));
    }
    s
}

/// One-line summary used by the suite.
pub fn summary_line(name: &str, report: &SolverReport) -> String {
    let x: Vec<String> = report.x.iter().map(|v| format!("{v:.6e}")).collect();
    format!(
        "{name:<18} {:<18} iters={:<5} f={:<14.6e} w={:<11.3e} x=[{}]",
        status_name(report),
        report.iterations,
        report.f,
        report.w,
        x.join(", ")
    )
}
