//! The outer iteration: subproblem set-up and solve, aggregation, the
//! optimality measure `w_k`, termination, line search and bundle update.

use std::cell::Cell;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::bundle::{
    aggregate, init_state, localized_errors, select_curvature_matrices, select_w, update_after_step,
    AggregateState, Aggregation, BundleError, CurvatureSet, SolverState, StepData,
};
use crate::linalg::{inv_sqrt_psd, quad_form, LinalgError, SymMatrix};
use crate::linesearch::{line_search, LineSearchError, LineSearchOutcome, SearchContext, StepKind};
use crate::params::{ParamError, SolverParams};
use crate::problem::{evaluate, Problem, ProblemError};
use crate::qcqp::{solve_search_direction, Cut, QcqpInstance, SubproblemSolution};

/// Consecutive subproblem or line-search failures tolerated before stopping.
pub const MAX_CONSECUTIVE_FAILURES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    InvalidParams(#[from] ParamError),
    #[error("starting point is not strictly feasible: F(x1) = {cons}")]
    InfeasibleStart { cons: f64 },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
    SubproblemFailure,
    OracleFailure,
}

/// One line of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub cons: f64,
    pub w: f64,
    pub v: f64,
    pub v_hat: f64,
    pub d_norm: f64,
    pub kappa_bar: f64,
    /// `None` on the terminal iteration, which takes no step.
    pub step_kind: Option<StepKind>,
    pub t_l: Option<f64>,
    pub t_r: Option<f64>,
    pub bundle_size: usize,
    pub gap: f64,
    pub elapsed_s: f64,
}

/// Components of the approximate stationarity condition at termination;
/// each is bounded by `w_k`-scale quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityCertificate {
    /// `|g̃_p + κ̄ĝ̃_p|`.
    pub residual_norm: f64,
    /// `α̃_p`.
    pub alpha: f64,
    /// `κ̄ Ã_p`.
    pub kappa_a: f64,
    /// `κ̄ |F(x_k)|`.
    pub kappa_cons: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub x: DVector<f64>,
    pub f: f64,
    pub cons: f64,
    /// Last computed `w_k`; infinite if none was computed.
    pub w: f64,
    pub iterations: usize,
    pub records: Vec<IterationRecord>,
    /// `|g̃_p + κ̄ĝ̃_p|` from the last aggregation.
    pub stationarity_residual: f64,
    pub certificate: Option<StationarityCertificate>,
    /// Description of the failure for non-converged statuses.
    pub message: Option<String>,
    /// Subproblem failures recovered from by resetting the bundle.
    pub subproblem_failures: usize,
    /// Line searches that hit their cap and fell back to a null step.
    pub line_search_failures: usize,
}

/// Everything computed in one iteration, passed to the callback of
/// [`run_with_callback`] after the bundle update.
pub struct IterationSnapshot<'a> {
    pub record: &'a IterationRecord,
    pub instance: &'a QcqpInstance,
    pub solution: &'a SubproblemSolution,
    pub aggregation: &'a Aggregation,
    pub outcome: Option<&'a LineSearchOutcome>,
    /// State after the update (unchanged on the terminal iteration).
    pub state: &'a SolverState,
    pub params: &'a SolverParams,
}

/// `(v_k, w_k)`, with the `H_k`-norm term evaluated as `dᵀH_k⁻²d`.
pub fn compute_vk_wk(inst: &QcqpInstance, sol: &SubproblemSolution, agg: &Aggregation) -> (f64, f64) {
    let d = &sol.d;
    let m = inst.combined_curvature(&sol.multipliers);
    let dwd = quad_form(&inst.w_bar, d);
    let dmd = quad_form(&m, d);
    let tail = agg.alpha + agg.kappa_bar * agg.cons_alpha + agg.kappa_bar * (-inst.cons);
    let v = -dwd - 0.5 * (dmd - dwd) - tail;
    let w = 0.5 * dmd + tail;
    (v, w)
}

/// `(½|H_k(g̃_p + κ̄ĝ̃_p)|², ½dᵀH_k⁻²d)` with `H_k` formed explicitly.
pub fn h_norm_check(
    inst: &QcqpInstance,
    sol: &SubproblemSolution,
    agg: &Aggregation,
) -> Result<(f64, f64), LinalgError> {
    let m = inst.combined_curvature(&sol.multipliers);
    let h = inv_sqrt_psd(&m)?;
    let b = &agg.g + &agg.cons_g * agg.kappa_bar;
    Ok((0.5 * (h * b).norm_squared(), 0.5 * quad_form(&m, &sol.d)))
}

pub fn termination_check(w: f64, eps: f64) -> bool {
    w <= eps
}

pub fn stationarity_certificate(agg: &Aggregation, cons: f64) -> StationarityCertificate {
    StationarityCertificate {
        residual_norm: (&agg.g + &agg.cons_g * agg.kappa_bar).norm(),
        alpha: agg.alpha,
        kappa_a: agg.kappa_bar * agg.cons_alpha,
        kappa_cons: agg.kappa_bar * cons.abs(),
    }
}

/// Subproblem of the current iteration and the matrices it was built from.
pub fn build_subproblem(
    state: &SolverState,
    params: &SolverParams,
) -> Result<(QcqpInstance, SymMatrix, CurvatureSet), BundleError> {
    let curvature = select_curvature_matrices(state, params)?;
    let newest = state.newest();
    let (_, w_bar) = select_w(state, &newest.hess, &newest.cons_hess, params)?;
    let errors = localized_errors(state, params);
    let with_aggregate = state.include_aggregate(params);
    let inst = QcqpInstance {
        w_bar: w_bar.clone(),
        objective_cuts: state
            .entries
            .iter()
            .zip(&errors.alpha)
            .zip(&curvature.entries)
            .map(|((e, a), c)| Cut::new(e.g.clone(), *a, c.clone()))
            .collect(),
        objective_aggregate: with_aggregate
            .then(|| Cut::new(state.agg.g.clone(), errors.alpha_p, curvature.aggregate.clone())),
        constraint_cuts: state
            .entries
            .iter()
            .zip(&errors.a)
            .zip(&curvature.cons_entries)
            .map(|((e, a), c)| Cut::new(e.cons_g.clone(), *a, c.clone()))
            .collect(),
        constraint_aggregate: with_aggregate
            .then(|| Cut::new(state.agg.cons_g.clone(), errors.a_p, curvature.cons_aggregate.clone())),
        cons: state.cons,
    };
    Ok((inst, w_bar, curvature))
}

/// Drops everything but the newest entry and restarts the aggregate from it.
fn reset_to_newest(state: &mut SolverState) {
    let newest = state.entries.pop().expect("bundle is never empty");
    state.agg = AggregateState {
        f: newest.f,
        g: newest.g.clone(),
        hess: newest.damped_hess(),
        s: newest.s,
        cons: newest.cons,
        cons_g: newest.cons_g.clone(),
        cons_hess: newest.damped_cons_hess(),
        cons_s: newest.s,
    };
    state.entries = vec![newest];
    state.i_s = 0;
    state.w_bar_prev = None;
    state.curvature_prev = None;
}

pub fn run(problem: &Problem, params: &SolverParams, x1: &DVector<f64>) -> Result<SolverReport, SolverError> {
    run_with_callback(problem, params, x1, |_| {})
}

/// Runs the method from the strictly feasible `x1`, calling `callback` once
/// per completed iteration.
pub fn run_with_callback(
    problem: &Problem,
    params: &SolverParams,
    x1: &DVector<f64>,
    mut callback: impl FnMut(&IterationSnapshot<'_>),
) -> Result<SolverReport, SolverError> {
    params.validate()?;
    problem.validate()?;
    let sample = evaluate(problem, x1)?;
    let mut state = match init_state(&sample, params) {
        Ok(s) => s,
        Err(BundleError::InfeasibleStart { cons }) => return Err(SolverError::InfeasibleStart { cons }),
        Err(e) => return Err(ProblemError::InvalidProblem(e.to_string()).into()),
    };
    let tol = params.qp_tolerances();
    let start = Instant::now();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last_w = f64::INFINITY;
    let mut last_cert: Option<StationarityCertificate> = None;
    let mut qp_failures = 0;
    let mut ls_failures = 0;
    let total_qp_failures = Cell::new(0);
    let total_ls_failures = Cell::new(0);

    let finish = |state: &SolverState,
                  status,
                  records: Vec<IterationRecord>,
                  w,
                  cert: Option<StationarityCertificate>,
                  message: Option<String>| SolverReport {
        status,
        x: state.x.clone(),
        f: state.f,
        cons: state.cons,
        w,
        iterations: records.len(),
        stationarity_residual: cert.map_or(f64::NAN, |c| c.residual_norm),
        certificate: cert,
        records,
        message,
        subproblem_failures: total_qp_failures.get(),
        line_search_failures: total_ls_failures.get(),
    };

    loop {
        if records.len() >= params.max_iter {
            return Ok(finish(&state, SolverStatus::MaxIterations, records, last_w, last_cert, None));
        }
        let k = state.k;

        // subproblem
        let attempt = build_subproblem(&state, params)
            .map_err(|e| e.to_string())
            .and_then(|(inst, w_bar, curv)| {
                let sol = solve_search_direction(&inst, &tol).map_err(|e| e.to_string())?;
                let agg = aggregate(&state, &sol.multipliers, params).map_err(|e| e.to_string())?;
                Ok((inst, w_bar, curv, sol, agg))
            });
        let (inst, w_bar, curvature, sol, agg) = match attempt {
            Ok(parts) => {
                qp_failures = 0;
                parts
            }
            Err(message) => {
                qp_failures += 1;
                total_qp_failures.set(total_qp_failures.get() + 1);
                if qp_failures >= MAX_CONSECUTIVE_FAILURES {
                    let message = format!("iteration {k}: {message}");
                    return Ok(finish(&state, SolverStatus::SubproblemFailure, records, last_w, last_cert, Some(message)));
                }
                reset_to_newest(&mut state);
                continue;
            }
        };
        state.bundle_reset(params);

        let (v, w) = compute_vk_wk(&inst, &sol, &agg);
        let cert = stationarity_certificate(&agg, state.cons);
        last_w = w;
        last_cert = Some(cert);
        let mut record = IterationRecord {
            k,
            x: state.x.iter().copied().collect(),
            f: state.f,
            cons: state.cons,
            w,
            v,
            v_hat: sol.v_hat,
            d_norm: sol.d.norm(),
            kappa_bar: agg.kappa_bar,
            step_kind: None,
            t_l: None,
            t_r: None,
            bundle_size: state.entries.len(),
            gap: sol.gap,
            elapsed_s: 0.0,
        };

        if termination_check(w, params.eps) {
            record.elapsed_s = start.elapsed().as_secs_f64();
            emit(&mut callback, &mut records, record, &inst, &sol, &agg, None, &state, params);
            return Ok(finish(&state, SolverStatus::Converged, records, w, Some(cert), None));
        }

        // line search
        let ctx = SearchContext {
            x: &state.x,
            d: &sol.d,
            v,
            f: state.f,
            cons: state.cons,
            i_n: state.i_n,
            t0: state.t0,
        };
        let outcome = match line_search(problem, ctx, params) {
            Ok(out) => {
                ls_failures = 0;
                out
            }
            Err(LineSearchError::Oracle(e)) => {
                record.elapsed_s = start.elapsed().as_secs_f64();
                emit(&mut callback, &mut records, record, &inst, &sol, &agg, None, &state, params);
                let message = format!("iteration {k}: {e}");
                return Ok(finish(&state, SolverStatus::OracleFailure, records, w, Some(cert), Some(message)));
            }
            Err(e) => {
                ls_failures += 1;
                total_ls_failures.set(total_ls_failures.get() + 1);
                let fallback = match &e {
                    LineSearchError::NotTerminated { fallback, .. } if ls_failures < MAX_CONSECUTIVE_FAILURES => {
                        Some((**fallback).clone())
                    }
                    _ => None,
                };
                match fallback {
                    Some(out) => out,
                    None => {
                        record.elapsed_s = start.elapsed().as_secs_f64();
                        emit(&mut callback, &mut records, record, &inst, &sol, &agg, None, &state, params);
                        let message = format!("iteration {k}: {e}");
                        return Ok(finish(&state, SolverStatus::LineSearchFailure, records, w, Some(cert), Some(message)));
                    }
                }
            }
        };

        record.step_kind = Some(outcome.kind);
        record.t_l = Some(outcome.t_l);
        record.t_r = Some(outcome.t_r);
        let step = StepData {
            serious: outcome.kind == StepKind::Serious,
            delta: &sol.d * outcome.t_l,
            f_next: outcome.f_l,
            cons_next: outcome.cons_l,
            sample: outcome.sample.clone(),
        };
        state.remember_matrices(w_bar, curvature);
        state.t0 = outcome.t0;
        if let Err(e) = update_after_step(&mut state, &step, &agg, params) {
            record.elapsed_s = start.elapsed().as_secs_f64();
            emit(&mut callback, &mut records, record, &inst, &sol, &agg, Some(&outcome), &state, params);
            let message = format!("iteration {k}: {e}");
            return Ok(finish(&state, SolverStatus::LineSearchFailure, records, w, Some(cert), Some(message)));
        }
        record.elapsed_s = start.elapsed().as_secs_f64();
        emit(&mut callback, &mut records, record, &inst, &sol, &agg, Some(&outcome), &state, params);
    }
}

#[allow(clippy::too_many_arguments)]
fn emit(
    callback: &mut impl FnMut(&IterationSnapshot<'_>),
    records: &mut Vec<IterationRecord>,
    record: IterationRecord,
    instance: &QcqpInstance,
    solution: &SubproblemSolution,
    aggregation: &Aggregation,
    outcome: Option<&LineSearchOutcome>,
    state: &SolverState,
    params: &SolverParams,
) {
    callback(&IterationSnapshot {
        record: &record,
        instance,
        solution,
        aggregation,
        outcome,
        state,
        params,
    });
    records.push(record);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_problem, Evaluation};
    use nalgebra::dvector;

    #[test]
    fn termination_examples() {
        assert!(termination_check(0.0, 0.0));
        assert!(termination_check(1e-9, 1e-8));
        assert!(!termination_check(1e-7, 1e-8));
    }

    fn run_builtin(name: &str, params: &SolverParams) -> (SolverReport, Vec<(f64, f64, f64, f64, f64)>) {
        let p = builtin_problem(name).unwrap();
        let x1 = p.default_start().unwrap().clone();
        let mut chain = Vec::new();
        let report = run_with_callback(&p, params, &x1, |s| {
            let r = s.record;
            chain.push((r.v_hat, r.v, r.w, s.solution.w_hat, s.instance.w_bar.norm()));
            let dwd = quad_form(&s.instance.w_bar, &s.solution.d);
            assert!((r.w + 0.5 * dwd + r.v).abs() <= 1e-8 * r.w.abs().max(1.0));
        })
        .unwrap();
        (report, chain)
    }

    #[test]
    fn maratos_converges_to_origin() {
        let (report, chain) = run_builtin("maratos", &SolverParams::default());
        assert_eq!(report.status, SolverStatus::Converged, "{:?}", report.message);
        // W carries the constraint curvature, so each step halves x₁ and the
        // stop w ≈ ½x₁² ≤ ε is first met at x₁ = 2⁻¹³
        for (k, r) in report.records.iter().enumerate() {
            assert!((r.x[0] - 0.5f64.powi(k as i32)).abs() <= 1e-6 * 0.5f64.powi(k as i32), "{k}: {:?}", r.x);
        }
        assert!((report.x[0] - 0.5f64.powi(13)).abs() <= 1e-9, "{}", report.x);
        assert!(report.records.iter().all(|r| r.cons < 0.0));
        assert!(report.w <= 1e-8);
        for (v_hat, v, w, w_hat, _) in chain {
            assert!(v_hat <= v + 1e-7 && v <= 1e-7 && w >= -1e-7 && w <= w_hat + 1e-7);
        }
    }

    #[test]
    fn abs_reduces_to_unconstrained_method() {
        let p = builtin_problem("abs").unwrap();
        let params = SolverParams::default();
        let mut shrinks = 0;
        let report = run_with_callback(&p, &params, &dvector![5.0], |s| {
            shrinks += s.outcome.map_or(0, |o| o.t0_shrinks);
        })
        .unwrap();
        assert_eq!(report.status, SolverStatus::Converged);
        assert!(report.x[0].abs() <= 1e-6);
        assert_eq!(shrinks, 0);
        let cert = report.certificate.unwrap();
        assert_eq!((cert.kappa_a, cert.kappa_cons), (0.0, 0.0));
        // w ≥ ½|H b|² with H ≥ (|M|)^(-1/2) bounds the residual
        assert!(cert.residual_norm <= 1e-3);
    }

    #[test]
    fn maratos_complementarity_at_termination() {
        let (report, _) = run_builtin("maratos", &SolverParams::default());
        let cert = report.certificate.unwrap();
        assert!(cert.kappa_cons <= 1e-3);
        assert!(cert.alpha <= 1e-8 && cert.kappa_a <= 1e-8 && cert.kappa_cons <= 1e-8);
    }

    #[test]
    fn exact_stop_at_stationary_start() {
        // f = |x|², F ≡ −1, start at the minimizer: d = 0 and every term vanishes
        let p = Problem::new("sq", 2, |x: &DVector<f64>| {
            Evaluation::new(x.norm_squared(), x * 2.0).with_hessian(SymMatrix::identity(2, 2) * 2.0)
        })
        .constraint(|_: &DVector<f64>| Evaluation::new(-1.0, dvector![0.0, 0.0]));
        let mut params = SolverParams::default();
        params.eps = 0.0;
        let report = run(&p, &params, &dvector![0.0, 0.0]).unwrap();
        assert_eq!(report.status, SolverStatus::Converged);
        assert_eq!(report.iterations, 1);
        let c = report.certificate.unwrap();
        assert_eq!((c.residual_norm, c.alpha, c.kappa_a, c.kappa_cons), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((report.records[0].v, report.records[0].w), (0.0, 0.0));
    }

    #[test]
    fn iteration_cap_is_a_status() {
        let mut params = SolverParams::default();
        params.max_iter = 1;
        let p = builtin_problem("maratos").unwrap();
        let report = run(&p, &params, &dvector![1.0, 2.0]).unwrap();
        assert_eq!(report.status, SolverStatus::MaxIterations);
        assert_eq!(report.iterations, 1);
        assert!(report.cons < 0.0);
    }

    #[test]
    fn infeasible_start_and_bad_params_are_errors() {
        let p = builtin_problem("maratos").unwrap();
        assert_eq!(
            run(&p, &SolverParams::default(), &dvector![0.0, 0.0]),
            Err(SolverError::InfeasibleStart { cons: 0.0 })
        );
        let mut params = SolverParams::default();
        params.m_l = 0.6;
        assert!(matches!(
            run(&p, &params, &dvector![1.0, 2.0]),
            Err(SolverError::InvalidParams(_))
        ));
    }

    #[test]
    fn oracle_failure_during_run_is_a_status() {
        let p = Problem::new("bad", 1, |x: &DVector<f64>| {
            if x[0] < 0.5 {
                Evaluation::new(f64::NAN, dvector![1.0])
            } else {
                Evaluation::new(x[0], dvector![1.0]).with_hessian(SymMatrix::zeros(1, 1))
            }
        })
        .constraint(|_: &DVector<f64>| Evaluation::new(-1.0, dvector![0.0]));
        let report = run(&p, &SolverParams::default(), &dvector![1.0]).unwrap();
        assert_eq!(report.status, SolverStatus::OracleFailure);
        assert_eq!(report.records.len(), 1);
        assert!(report.message.unwrap().contains("iteration 1"));
    }

    #[test]
    fn h_norm_identity_holds_along_a_run() {
        let p = builtin_problem("nonconvex-min-hat").unwrap();
        let mut worst = 0.0f64;
        run_with_callback(&p, &SolverParams::default(), &dvector![1.0, 0.0], |s| {
            let (a, b) = h_norm_check(s.instance, s.solution, s.aggregation).unwrap();
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
        })
        .unwrap();
        assert!(worst <= 1e-8, "{worst}");
    }

    /// With every `Ḡ_j` forced to the floor and `F ≡ −1`, `v_k` matches the
    /// unconstrained bundle-Newton value `−|H_kg̃_p|² − α̃_p`.
    #[test]
    fn unconstrained_form_of_predicted_descent() {
        let p = builtin_problem("maxq").unwrap();
        let mut params = SolverParams::default();
        params.c_g_bar = 1e-8;
        params.c_g_bar_hat = 1e-8;
        params.max_iter = 40;
        let mut checked = 0;
        run_with_callback(&p, &params, &dvector![3.0, -2.0], |s| {
            let m = s.instance.combined_curvature(&s.solution.multipliers);
            let h = inv_sqrt_psd(&m).unwrap();
            let classic = -(h * &s.aggregation.g).norm_squared() - s.aggregation.alpha;
            let v = s.record.v;
            assert!((v - classic).abs() <= 1e-6 * (1.0 + v.abs()), "{v} vs {classic}");
            checked += 1;
        })
        .unwrap();
        assert!(checked > 0);
    }

    #[test]
    fn records_serialize_with_expected_keys() {
        let (report, _) = run_builtin("abs", &SolverParams::default());
        let value = serde_json::to_value(&report.records[0]).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut expected = [
            "k", "x", "f", "cons", "w", "v", "v_hat", "d_norm", "kappa_bar", "step_kind", "t_l", "t_r",
            "bundle_size", "gap", "elapsed_s",
        ];
        expected.sort_unstable();
        assert_eq!(keys, expected);
        assert_eq!(value["step_kind"], "short_null_objective");
    }
}
