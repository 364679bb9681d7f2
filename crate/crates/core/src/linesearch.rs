//! Line search along the search direction: returns a serious step, or a
//! short/null step whose new cut changes the model of the objective or of
//! the constraint.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::bundle::pd_modification;
use crate::linalg::{damping_factor, quad_form, spectral_norm, LinalgError, SymMatrix};
use crate::params::SolverParams;
use crate::problem::{evaluate, OracleSample, Problem, ProblemError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Serious,
    ShortNullObjective,
    ShortNullConstraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub kind: StepKind,
    pub t_l: f64,
    pub t_r: f64,
    /// Lower bound for serious step sizes after this search.
    pub t0: f64,
    /// Oracle sample at `y_{k+1} = x_k + t_R d_k`.
    pub sample: OracleSample,
    /// `f` and `F` at `x_{k+1} = x_k + t_L d_k`.
    pub f_l: f64,
    pub cons_l: f64,
    /// Number of trial points evaluated.
    pub iterations: usize,
    /// Number of times the bound `t0` was reduced.
    pub t0_shrinks: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineSearchError {
    #[error("line search input is invalid: {0}")]
    InvalidInput(String),
    #[error("line search did not terminate after {iterations} trials (bracket [{t_l}, {t_u}])")]
    NotTerminated {
        iterations: usize,
        t_l: f64,
        t_u: f64,
        /// A null step built from the last trial point.
        fallback: Box<LineSearchOutcome>,
    },
    #[error(transparent)]
    Oracle(#[from] ProblemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Data of the cut from trial `t`, shifted to `x_k + t_L d_k`, and the
/// model-change test for the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveData {
    pub rho: f64,
    pub f_shifted: f64,
    pub beta: f64,
    pub g_bar: SymMatrix,
    /// Left and right sides of the model-change inequality.
    pub lhs: f64,
    pub rhs: f64,
    pub z: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintData {
    pub rho_hat: f64,
    pub cons_shifted: f64,
    pub beta_hat: f64,
    pub g_hat_bar: SymMatrix,
    pub lhs: f64,
    pub rhs: f64,
    pub z_hat: bool,
}

/// Inputs describing the current iterate and direction.
#[derive(Debug, Clone, Copy)]
pub struct SearchContext<'a> {
    pub x: &'a DVector<f64>,
    pub d: &'a DVector<f64>,
    pub v: f64,
    pub f: f64,
    pub cons: f64,
    pub i_n: usize,
    pub t0: f64,
}

/// Objective-side data for trial `t`; `f_l` is `f(x_k + t_L d_k)`.
pub fn compute_objective_data(
    t: f64,
    t_l: f64,
    d: &DVector<f64>,
    v: f64,
    trial: &OracleSample,
    f_l: f64,
    i_n: usize,
    params: &SolverParams,
) -> Result<ObjectiveData, LinalgError> {
    let rho = if i_n <= params.i_rho {
        damping_factor(spectral_norm(&trial.hess)?, params.c_g)
    } else {
        0.0
    };
    let h = t_l - t;
    let dgd = quad_form(&trial.hess, d);
    let f_shifted = trial.f + h * trial.g.dot(d) + 0.5 * rho * h * h * dgd;
    let dn = d.norm();
    let beta = (f_l - f_shifted)
        .abs()
        .max(params.gamma1 * (h.abs() * dn).powf(params.omega1));
    let g_bar = pd_modification(&trial.hess, params, params.c_g_bar)?;
    let lhs = -beta + trial.g.dot(d) + rho * h * dgd;
    let rhs = params.m_r * v + params.m_f * (-0.5 * quad_form(&g_bar, d));
    let z = lhs >= rhs && (t - t_l) * dn <= params.c_s;
    Ok(ObjectiveData {
        rho,
        f_shifted,
        beta,
        g_bar,
        lhs,
        rhs,
        z,
    })
}

/// Constraint-side data for trial `t`; `cons_l` is `F(x_k + t_L d_k)`.
pub fn compute_constraint_data(
    t: f64,
    t_l: f64,
    d: &DVector<f64>,
    trial: &OracleSample,
    cons_l: f64,
    params: &SolverParams,
) -> Result<ConstraintData, LinalgError> {
    let rho_hat = damping_factor(spectral_norm(&trial.cons_hess)?, params.c_g_hat);
    let h = t_l - t;
    let dgd = quad_form(&trial.cons_hess, d);
    let cons_shifted = trial.cons + h * trial.cons_g.dot(d) + 0.5 * rho_hat * h * h * dgd;
    let dn = d.norm();
    let beta_hat = (cons_l - cons_shifted)
        .abs()
        .max(params.gamma2 * (h.abs() * dn).powf(params.omega2));
    let g_hat_bar = pd_modification(&trial.cons_hess, params, params.c_g_bar_hat)?;
    let lhs = cons_l - beta_hat + trial.cons_g.dot(d) + rho_hat * h * dgd;
    let rhs = params.m_cap_f * (-0.5 * quad_form(&g_hat_bar, d));
    let z_hat = lhs >= rhs && (t - t_l) * dn <= params.c_s;
    Ok(ConstraintData {
        rho_hat,
        cons_shifted,
        beta_hat,
        g_hat_bar,
        lhs,
        rhs,
        z_hat,
    })
}

/// Next trial step: minimizer of the quadratic through `(t_L, f_L)` with
/// slope `v` and through `(t_U, f_U)`, clamped to the safeguarded bracket.
pub fn interpolate(t_l: f64, t_u: f64, f_l: f64, f_u: f64, v: f64, zeta: f64, theta: f64) -> f64 {
    let width = t_u - t_l;
    let margin = zeta * width.powf(theta);
    let (lo, hi) = (t_l + margin, t_u - margin);
    let c = (f_u - f_l - v * width) / (width * width);
    let t = if c > 0.0 && c.is_finite() {
        t_l - v / (2.0 * c)
    } else {
        0.5 * (t_l + t_u)
    };
    if t.is_finite() {
        t.clamp(lo, hi)
    } else {
        0.5 * (t_l + t_u)
    }
}

/// Searches `t ∈ (0, 1]` along `d` from the strictly feasible `x`.
pub fn line_search(
    problem: &Problem,
    ctx: SearchContext<'_>,
    params: &SolverParams,
) -> Result<LineSearchOutcome, LineSearchError> {
    let SearchContext { x, d, v, f, cons, i_n, t0 } = ctx;
    if !(v < 0.0) {
        return Err(LineSearchError::InvalidInput(format!("predicted descent {v} is not negative")));
    }
    if !(cons < 0.0) {
        return Err(LineSearchError::InvalidInput(format!("F(x) = {cons} is not negative")));
    }
    if d.iter().any(|c| !c.is_finite()) {
        return Err(LineSearchError::InvalidInput("non-finite direction".into()));
    }
    let i_l = params.line_search_switch();
    let mut t0 = t0;
    let mut shrinks = 0;
    let (mut t_l, mut t_u, mut t) = (0.0, 1.0, 1.0);
    let (mut f_l, mut cons_l) = (f, cons);
    let mut f_u = f64::NAN;
    let mut sample_l: Option<OracleSample> = None;
    let mut last: Option<(f64, OracleSample)> = None;

    for iteration in 1..=params.ls_max_iter {
        let y = x + d * t;
        let trial = evaluate(problem, &y)?;
        let feasible = trial.cons < 0.0;
        if feasible {
            if trial.f <= f + params.m_l * v * t {
                t_l = t;
                f_l = trial.f;
                cons_l = trial.cons;
                sample_l = Some(trial.clone());
            } else {
                t_u = t;
                f_u = trial.f;
            }
        } else {
            t_u = t;
            f_u = trial.f;
            t0 = params.t0_hat * t_u;
            shrinks += 1;
        }
        if t_l >= t0 {
            return Ok(LineSearchOutcome {
                kind: StepKind::Serious,
                t_l,
                t_r: t_l,
                t0,
                sample: sample_l.expect("t_L > 0 was set by a feasible trial"),
                f_l,
                cons_l,
                iterations: iteration,
                t0_shrinks: shrinks,
            });
        }

        let null = |kind| LineSearchOutcome {
            kind,
            t_l,
            t_r: t,
            t0,
            sample: trial.clone(),
            f_l,
            cons_l,
            iterations: iteration,
            t0_shrinks: shrinks,
        };
        if i_n < i_l {
            if feasible {
                let od = compute_objective_data(t, t_l, d, v, &trial, f_l, i_n, params)?;
                if od.z {
                    return Ok(null(StepKind::ShortNullObjective));
                }
            } else {
                let cd = compute_constraint_data(t, t_l, d, &trial, cons_l, params)?;
                if cd.z_hat {
                    return Ok(null(StepKind::ShortNullConstraint));
                }
            }
        } else if feasible {
            let od = compute_objective_data(t, t_l, d, v, &trial, f_l, i_n, params)?;
            if od.z {
                return Ok(null(StepKind::ShortNullObjective));
            }
        }

        last = Some((t, trial));
        t = interpolate(t_l, t_u, f_l, f_u, v, params.zeta, params.theta);
    }

    let (t_last, trial) = last.expect("at least one trial");
    let kind = if trial.cons < 0.0 {
        StepKind::ShortNullObjective
    } else {
        StepKind::ShortNullConstraint
    };
    Err(LineSearchError::NotTerminated {
        iterations: params.ls_max_iter,
        t_l,
        t_u,
        fallback: Box::new(LineSearchOutcome {
            kind,
            t_l,
            t_r: t_last,
            t0,
            sample: trial,
            f_l,
            cons_l,
            iterations: params.ls_max_iter,
            t0_shrinks: shrinks,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Evaluation;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn linear_1d(f_slope: f64, cons: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Problem {
        Problem::new("lin", 1, move |x: &DVector<f64>| {
            Evaluation::new(f_slope * x[0], dvector![f_slope]).with_hessian(SymMatrix::zeros(1, 1))
        })
        .constraint(move |x: &DVector<f64>| {
            let h = 1e-7;
            let g = (cons(x[0] + h) - cons(x[0] - h)) / (2.0 * h);
            Evaluation::new(cons(x[0]), dvector![g]).with_hessian(SymMatrix::zeros(1, 1))
        })
    }

    fn ctx<'a>(x: &'a DVector<f64>, d: &'a DVector<f64>, v: f64, p: &Problem, i_n: usize, t0: f64) -> SearchContext<'a> {
        let s = evaluate(p, x).unwrap();
        SearchContext {
            x,
            d,
            v,
            f: s.f,
            cons: s.cons,
            i_n,
            t0,
        }
    }

    #[test]
    fn linear_descent_is_serious_at_full_step() {
        let p = linear_1d(-1.0, |_| -1.0);
        let params = SolverParams::default();
        let x = dvector![0.0];
        let d = dvector![1.0];
        let out = line_search(&p, ctx(&x, &d, -1.0, &p, 0, params.t0), &params).unwrap();
        assert_eq!(out.kind, StepKind::Serious);
        assert_eq!((out.t_l, out.t_r, out.iterations), (1.0, 1.0, 1));
        assert_eq!(out.t0, params.t0);
        assert_eq!(out.sample.point, dvector![1.0]);
    }

    #[test]
    fn short_feasible_segment_shrinks_t0() {
        // f decreases linearly, F(x + t d) >= 0 for t >= 1e-4 < t0
        let p = linear_1d(-1.0, |x| x - 1e-4);
        let mut params = SolverParams::default();
        params.i_l = Some(0);
        let x = dvector![0.0];
        let d = dvector![1.0];
        let out = line_search(&p, ctx(&x, &d, -1.0, &p, 0, params.t0), &params).unwrap();
        assert_eq!(out.kind, StepKind::Serious);
        assert!(out.t_l > 0.0 && out.t_l < 1e-4);
        assert!(out.t0 < params.t0 && out.t_l >= out.t0);
        assert!(out.t0_shrinks > 0);
        assert!(out.iterations <= 50);
        assert!(out.cons_l < 0.0);
    }

    /// f = max(-t, 3t - 2) along d: the kink at t = 1/2 makes the new cut
    /// from a feasible non-descent trial change the model.
    #[test]
    fn kink_gives_objective_null_step() {
        let p = Problem::new("kink", 1, |x: &DVector<f64>| {
            let (a, b) = (-x[0], 3.0 * x[0] - 2.0);
            let (v, g) = if a >= b { (a, -1.0) } else { (b, 3.0) };
            Evaluation::new(v, dvector![g]).with_hessian(SymMatrix::zeros(1, 1))
        })
        .constraint(|_: &DVector<f64>| Evaluation::new(-1.0, dvector![0.0]));
        let params = SolverParams::default();
        let x = dvector![0.0];
        let d = dvector![1.0];
        let v = -1.0;
        let out = line_search(&p, ctx(&x, &d, v, &p, 0, params.t0), &params).unwrap();
        // t = 1: f = 1 > 0 - 0.01, so t_U = 1 and the cut there has slope 3:
        // β = max(|0 - (1 - 3)|, 1) = 2, lhs = -2 + 3 = 1 ≥ m_R v = -0.5
        assert_eq!(out.kind, StepKind::ShortNullObjective);
        assert_eq!((out.t_l, out.t_r), (0.0, 1.0));
        let od = compute_objective_data(1.0, 0.0, &d, v, &out.sample, 0.0, 0, &params).unwrap();
        assert_eq!(od.f_shifted, -2.0);
        assert_eq!(od.beta, 2.0);
        assert_eq!(od.lhs, 1.0);
        assert_eq!(od.rhs, -0.5);
    }

    #[test]
    fn objective_data_for_linear_function() {
        let p = linear_1d(2.0, |_| -1.0);
        let params = SolverParams::default();
        let d = dvector![0.5];
        let t = 0.4;
        let trial = evaluate(&p, &(d.clone() * t)).unwrap();
        let f_x = 0.0;
        let od = compute_objective_data(t, 0.0, &d, -1.0, &trial, f_x, 0, &params).unwrap();
        let expected = trial.f - t * trial.g.dot(&d);
        assert_eq!(od.f_shifted, expected);
        assert_eq!(od.beta, (f_x - expected).abs().max((t * d.norm()).powi(2)));
        // t = t_L: no shift and no locality term
        let od = compute_objective_data(t, t, &d, -1.0, &trial, trial.f, 0, &params).unwrap();
        assert_eq!((od.f_shifted, od.beta), (trial.f, 0.0));
    }

    #[test]
    fn constraint_data_is_exact_for_quadratic_constraint() {
        let p = crate::problem::builtin_problem("maratos").unwrap();
        let params = SolverParams::default();
        let x = dvector![0.5, 0.3];
        let d = dvector![1.0, -2.0];
        let (t, t_l) = (0.8, 0.25);
        let trial = evaluate(&p, &(&x + &d * t)).unwrap();
        let at_l = evaluate(&p, &(&x + &d * t_l)).unwrap();
        let cd = compute_constraint_data(t, t_l, &d, &trial, at_l.cons, &params).unwrap();
        assert!((cd.cons_shifted - at_l.cons).abs() < 1e-12);
        assert_eq!(cd.rho_hat, 1.0);
        let cd = compute_constraint_data(t_l, t_l, &d, &at_l, at_l.cons, &params).unwrap();
        assert_eq!((cd.cons_shifted, cd.beta_hat), (at_l.cons, 0.0));
        // the threshold is strictly negative for d ≠ 0
        assert!(cd.rhs < 0.0);
    }

    #[test]
    fn interpolation_examples() {
        // symmetric data around the midpoint
        let t = interpolate(0.0, 1.0, 0.25, 0.25, -1.0, 0.01, 1.0);
        assert!((t - 0.5).abs() < 1e-15);
        // quadratic with minimum at 0.3
        let q = |t: f64| (t - 0.3) * (t - 0.3);
        let t = interpolate(0.0, 1.0, q(0.0), q(1.0), -0.6, 0.01, 1.0);
        assert!((t - 0.3).abs() < 1e-15);
        let best = (0..=10000)
            .map(|i| i as f64 / 10000.0)
            .min_by(|a, b| q(*a).total_cmp(&q(*b)))
            .unwrap();
        assert!((t - best).abs() <= 1e-4);
        // nonpositive curvature falls back to the midpoint
        assert_eq!(interpolate(0.0, 1.0, 0.0, -1.0, -1.0, 0.01, 1.0), 0.5);
    }

    proptest! {
        #[test]
        fn interpolation_stays_in_safeguarded_bracket(
            t_l in 0.0..0.9f64, w in 1e-6..1.0f64, f_l in -10.0..10.0f64, f_u in -10.0..10.0f64,
            v in -10.0..-1e-6f64, zeta in 1e-3..0.49f64, theta in 1.0..3.0f64,
        ) {
            let t_u = (t_l + w).min(1.0);
            prop_assume!(t_u > t_l);
            let width = t_u - t_l;
            let t = interpolate(t_l, t_u, f_l, f_u, v, zeta, theta);
            let m = zeta * width.powf(theta);
            prop_assert!(t >= t_l + m - 1e-15 && t <= t_u - m + 1e-15);
        }

        #[test]
        fn outcomes_satisfy_their_contract(a in -3.0..-0.1f64, b in 0.2..5.0f64, c in 0.05..2.0f64, i_n in 0usize..6) {
            // f = max(a t, b (t - c)) along d, F(t) = t - 2c - 0.3
            let p = Problem::new("pl", 1, move |x: &DVector<f64>| {
                let (u, w) = (a * x[0], b * (x[0] - c));
                let (val, g) = if u >= w { (u, a) } else { (w, b) };
                Evaluation::new(val, dvector![g]).with_hessian(SymMatrix::zeros(1, 1))
            })
            .constraint(move |x: &DVector<f64>| Evaluation::new(x[0] - 2.0 * c - 0.3, dvector![1.0]));
            let params = SolverParams::default();
            let x = dvector![0.0];
            let d = dvector![1.0];
            let v = a;
            let out = line_search(&p, ctx(&x, &d, v, &p, i_n, params.t0), &params).unwrap();
            prop_assert!(0.0 <= out.t_l && out.t_l <= out.t_r && out.t_r <= 1.0);
            prop_assert!(out.t0 > 0.0 && out.t0 <= params.t0);
            prop_assert!(out.cons_l < 0.0);
            prop_assert!((out.t_r - out.t_l) * d.norm() <= params.c_s);
            match out.kind {
                StepKind::Serious => {
                    prop_assert_eq!(out.t_l, out.t_r);
                    prop_assert!(out.t_l >= out.t0);
                    prop_assert!(out.f_l <= 0.0 + params.m_l * v * out.t_l);
                }
                StepKind::ShortNullObjective => {
                    let od = compute_objective_data(out.t_r, out.t_l, &d, v, &out.sample, out.f_l, i_n, &params).unwrap();
                    prop_assert!(od.z);
                }
                StepKind::ShortNullConstraint => {
                    let cd = compute_constraint_data(out.t_r, out.t_l, &d, &out.sample, out.cons_l, &params).unwrap();
                    prop_assert!(cd.z_hat);
                }
            }
        }
    }

    #[test]
    fn rejects_nonnegative_descent() {
        let p = linear_1d(-1.0, |_| -1.0);
        let params = SolverParams::default();
        let x = dvector![0.0];
        let d = dvector![1.0];
        assert!(matches!(
            line_search(&p, ctx(&x, &d, 0.0, &p, 0, params.t0), &params),
            Err(LineSearchError::InvalidInput(_))
        ));
    }

    #[test]
    fn cap_returns_fallback_null_step() {
        // f increases along d while its reported gradient claims descent, so
        // neither the descent test nor the model-change test ever holds
        let p = Problem::new("misleading", 1, |x: &DVector<f64>| {
            Evaluation::new(x[0], dvector![-1.0]).with_hessian(SymMatrix::zeros(1, 1))
        })
        .constraint(|_: &DVector<f64>| Evaluation::new(-1.0, dvector![0.0]).with_hessian(SymMatrix::zeros(1, 1)));
        let mut params = SolverParams::default();
        params.ls_max_iter = 5;
        params.m_r = 0.999;
        let x = dvector![0.0];
        let d = dvector![1.0];
        match line_search(&p, ctx(&x, &d, -1e-3, &p, 0, params.t0), &params) {
            Err(LineSearchError::NotTerminated { fallback, iterations, .. }) => {
                assert_eq!(iterations, 5);
                assert_eq!(fallback.t_l, 0.0);
                assert!(fallback.t_r > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
