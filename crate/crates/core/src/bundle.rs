//! Bundle bookkeeping: per-entry shifted model data, locality measures,
//! the aggregate cut, matrix selection for the subproblem, and the update
//! applied after each line search.

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{damping_factor, psd_clip, quad_form, spectral_norm, LinalgError, SymMatrix};
use crate::params::SolverParams;
use crate::problem::OracleSample;
use crate::qcqp::Multipliers;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BundleError {
    #[error("initial point is not strictly feasible: F(x1) = {cons}")]
    InfeasibleStart { cons: f64 },
    #[error("new iterate is not strictly feasible: F = {cons}")]
    InfeasibleIterate { cons: f64 },
    #[error("inconsistent subproblem multipliers: {0}")]
    InconsistentMultipliers(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Multiplier values below `-MULTIPLIER_TOL` are rejected by [`aggregate`].
pub const MULTIPLIER_TOL: f64 = 1e-8;

/// One bundle element: the oracle data at its trial point `y_j` and the
/// model values shifted to the current iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub index: usize,
    pub point: DVector<f64>,
    pub sample_f: f64,
    pub sample_g: DVector<f64>,
    pub sample_cons: f64,
    pub sample_cons_g: DVector<f64>,
    /// Undamped Hessian substitutes `G_j`, `Ĝ_j`.
    pub hess: SymMatrix,
    pub cons_hess: SymMatrix,
    pub rho: f64,
    pub rho_hat: f64,
    /// `f_j^k`, `g_j^k`, `F_j^k`, `ĝ_j^k` at the current iterate.
    pub f: f64,
    pub g: DVector<f64>,
    pub cons: f64,
    pub cons_g: DVector<f64>,
    /// Locality measure `s_j^k`.
    pub s: f64,
}

/// Value and gradient at `x` of the quadratic model centred at `y`.
fn quad_model(
    value: f64,
    grad: &DVector<f64>,
    damped: &SymMatrix,
    y: &DVector<f64>,
    x: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let h = x - y;
    let gh = damped * &h;
    (value + grad.dot(&h) + 0.5 * h.dot(&gh), grad + gh)
}

impl BundleEntry {
    /// Creates the entry for `sample` with model values shifted to `center`.
    pub fn new(index: usize, sample: &OracleSample, center: &DVector<f64>, rho: f64, rho_hat: f64) -> Self {
        let mut e = BundleEntry {
            index,
            point: sample.point.clone(),
            sample_f: sample.f,
            sample_g: sample.g.clone(),
            sample_cons: sample.cons,
            sample_cons_g: sample.cons_g.clone(),
            hess: sample.hess.clone(),
            cons_hess: sample.cons_hess.clone(),
            rho,
            rho_hat,
            f: 0.0,
            g: DVector::zeros(0),
            cons: 0.0,
            cons_g: DVector::zeros(0),
            s: (center - &sample.point).norm(),
        };
        let (f, g, cons, cons_g) = e.model_at(center);
        e.f = f;
        e.g = g;
        e.cons = cons;
        e.cons_g = cons_g;
        e
    }

    pub fn damped_hess(&self) -> SymMatrix {
        &self.hess * self.rho
    }

    pub fn damped_cons_hess(&self) -> SymMatrix {
        &self.cons_hess * self.rho_hat
    }

    /// Direct evaluation of the entry's objective and constraint models and
    /// their gradients at `x`.
    pub fn model_at(&self, x: &DVector<f64>) -> (f64, DVector<f64>, f64, DVector<f64>) {
        let (f, g) = quad_model(self.sample_f, &self.sample_g, &self.damped_hess(), &self.point, x);
        let (c, cg) = quad_model(
            self.sample_cons,
            &self.sample_cons_g,
            &self.damped_cons_hess(),
            &self.point,
            x,
        );
        (f, g, c, cg)
    }

    fn shift(&mut self, delta: &DVector<f64>, step: f64) {
        let gd = self.damped_hess() * delta;
        self.f += self.g.dot(delta) + 0.5 * self.rho * quad_form(&self.hess, delta);
        self.g += gd;
        let cd = self.damped_cons_hess() * delta;
        self.cons += self.cons_g.dot(delta) + 0.5 * self.rho_hat * quad_form(&self.cons_hess, delta);
        self.cons_g += cd;
        self.s += step;
    }
}

/// The aggregate ("p") cut on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateState {
    pub f: f64,
    pub g: DVector<f64>,
    pub hess: SymMatrix,
    pub s: f64,
    pub cons: f64,
    pub cons_g: DVector<f64>,
    pub cons_hess: SymMatrix,
    pub cons_s: f64,
}

/// Result of aggregating the bundle with the subproblem multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub g: DVector<f64>,
    pub f: f64,
    /// `G_p^{k+1}`.
    pub hess_next: SymMatrix,
    pub s: f64,
    pub alpha: f64,
    pub cons_g: DVector<f64>,
    pub cons: f64,
    /// `Ĝ_p^{k+1}`.
    pub cons_hess_next: SymMatrix,
    pub cons_s: f64,
    pub cons_alpha: f64,
    /// `κ̄^{k+1}`.
    pub kappa_bar: f64,
    pub kappa: Vec<f64>,
    pub kappa_p: f64,
    /// Multiplier of the newest bundle entry, used for the next `W` choice.
    pub lambda_newest: f64,
}

/// Curvature matrices of the subproblem rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSet {
    pub entries: Vec<SymMatrix>,
    pub cons_entries: Vec<SymMatrix>,
    pub aggregate: SymMatrix,
    pub cons_aggregate: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedErrors {
    pub alpha: Vec<f64>,
    pub alpha_p: f64,
    pub a: Vec<f64>,
    pub a_p: f64,
}

/// What the bundle needs to know about a finished line search.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    pub serious: bool,
    /// `x_{k+1} - x_k = t_L d_k`.
    pub delta: DVector<f64>,
    pub f_next: f64,
    pub cons_next: f64,
    /// Oracle sample at `y_{k+1}`.
    pub sample: OracleSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub k: usize,
    pub x: DVector<f64>,
    pub f: f64,
    pub cons: f64,
    /// Oldest first; the last entry is the newest one.
    pub entries: Vec<BundleEntry>,
    pub agg: AggregateState,
    pub i_n: usize,
    pub i_s: usize,
    pub kappa_bar: f64,
    pub lambda_newest_prev: f64,
    /// Whether steps `k-1` and `k-2` were serious.
    pub serious_history: [bool; 2],
    pub w_bar_prev: Option<SymMatrix>,
    pub curvature_prev: Option<CurvatureSet>,
    pub t0: f64,
}

/// State at `k = 1` from the sample at a strictly feasible `x1`.
pub fn init_state(sample: &OracleSample, params: &SolverParams) -> Result<SolverState, BundleError> {
    if !(sample.cons < 0.0) {
        return Err(BundleError::InfeasibleStart { cons: sample.cons });
    }
    let x = sample.point.clone();
    let entry = BundleEntry::new(1, sample, &x, 1.0, 1.0);
    let agg = AggregateState {
        f: sample.f,
        g: sample.g.clone(),
        hess: sample.hess.clone(),
        s: 0.0,
        cons: sample.cons,
        cons_g: sample.cons_g.clone(),
        cons_hess: sample.cons_hess.clone(),
        cons_s: 0.0,
    };
    Ok(SolverState {
        k: 1,
        x,
        f: sample.f,
        cons: sample.cons,
        entries: vec![entry],
        agg,
        i_n: 0,
        i_s: 0,
        kappa_bar: 1.0,
        lambda_newest_prev: 0.0,
        serious_history: [false, false],
        w_bar_prev: None,
        curvature_prev: None,
        t0: params.t0,
    })
}

/// Positive definite modification with the configured floor and eigenvalue cap.
pub fn pd_modification(a: &SymMatrix, params: &SolverParams, cap: f64) -> Result<SymMatrix, LinalgError> {
    let floor = (params.pd_floor * spectral_norm(a)?.max(1.0)).min(cap);
    psd_clip(a, floor, cap)
}

impl SolverState {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn newest(&self) -> &BundleEntry {
        self.entries.last().expect("bundle is never empty")
    }

    /// Whether the aggregate rows enter the next subproblem.
    pub fn include_aggregate(&self, params: &SolverParams) -> bool {
        self.i_s <= params.reset_switch()
    }

    /// Clears the serious-step counter once it exceeds `i_r`. Call after
    /// the subproblem has been set up.
    pub fn bundle_reset(&mut self, params: &SolverParams) {
        if self.i_s > params.reset_switch() {
            self.i_s = 0;
        }
    }

    /// Records the matrices used this iteration for the reuse branches.
    pub fn remember_matrices(&mut self, w_bar: SymMatrix, curvature: CurvatureSet) {
        self.w_bar_prev = Some(w_bar);
        self.curvature_prev = Some(curvature);
    }

    /// Largest relative mismatch between the stored shifted values and a
    /// direct evaluation of each entry's model at `x_k`.
    pub fn shift_consistency_residual(&self) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        let relv = |a: &DVector<f64>, b: &DVector<f64>| (a - b).amax() / a.amax().max(b.amax()).max(1.0);
        self.entries
            .iter()
            .map(|e| {
                let (f, g, c, cg) = e.model_at(&self.x);
                rel(f, e.f).max(relv(&g, &e.g)).max(rel(c, e.cons)).max(relv(&cg, &e.cons_g))
            })
            .fold(0.0, f64::max)
    }
}

/// Localized approximation errors of every row.
pub fn localized_errors(state: &SolverState, params: &SolverParams) -> LocalizedErrors {
    let obj = |fj: f64, s: f64| (state.f - fj).abs().max(params.gamma1 * s.powf(params.omega1));
    let con = |cj: f64, s: f64| (state.cons - cj).abs().max(params.gamma2 * s.powf(params.omega2));
    LocalizedErrors {
        alpha: state.entries.iter().map(|e| obj(e.f, e.s)).collect(),
        alpha_p: obj(state.agg.f, state.agg.s),
        a: state.entries.iter().map(|e| con(e.cons, e.s)).collect(),
        a_p: con(state.agg.cons, state.agg.cons_s),
    }
}

/// Chooses `W` and its positive definite modification `W̄`.
pub fn select_w(
    state: &SolverState,
    hess_k: &SymMatrix,
    cons_hess_k: &SymMatrix,
    params: &SolverParams,
) -> Result<(SymMatrix, SymMatrix), BundleError> {
    let two_serious = state.serious_history[0] && state.serious_history[1];
    let newest_only = (state.lambda_newest_prev - 1.0).abs() <= 1e-9;
    let reset = state.i_s > params.reset_switch();
    let w = if two_serious && (newest_only || reset) {
        hess_k + cons_hess_k * state.kappa_bar
    } else {
        &state.agg.hess + &state.agg.cons_hess * state.kappa_bar
    };
    let limit = params.matrix_switch() + params.line_search_switch();
    let w_bar = match (&state.w_bar_prev, state.i_n > limit) {
        (Some(prev), true) => prev.clone(),
        _ => pd_modification(&w, params, f64::INFINITY)?,
    };
    Ok((w, w_bar))
}

/// Curvature matrices `Ḡ_j`, `Ĝ̄_j`, `Ḡ`, `Ĝ̄` of the subproblem rows.
pub fn select_curvature_matrices(
    state: &SolverState,
    params: &SolverParams,
) -> Result<CurvatureSet, BundleError> {
    let limit = params.matrix_switch() + params.line_search_switch();
    let m = state.entries.len();
    if state.i_n > limit {
        if let Some(prev) = &state.curvature_prev {
            return Ok(CurvatureSet {
                entries: vec![prev.aggregate.clone(); m],
                cons_entries: vec![prev.cons_aggregate.clone(); m],
                aggregate: prev.aggregate.clone(),
                cons_aggregate: prev.cons_aggregate.clone(),
            });
        }
    }
    let aggregate = pd_modification(&state.agg.hess, params, params.c_g_bar)?;
    let cons_aggregate = pd_modification(&state.agg.cons_hess, params, params.c_g_bar_hat)?;
    if state.i_n == limit {
        return Ok(CurvatureSet {
            entries: vec![aggregate.clone(); m],
            cons_entries: vec![cons_aggregate.clone(); m],
            aggregate,
            cons_aggregate,
        });
    }
    let entries = state
        .entries
        .iter()
        .map(|e| pd_modification(&e.hess, params, params.c_g_bar))
        .collect::<Result<Vec<_>, _>>()?;
    let cons_entries = state
        .entries
        .iter()
        .map(|e| pd_modification(&e.cons_hess, params, params.c_g_bar_hat))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CurvatureSet {
        entries,
        cons_entries,
        aggregate,
        cons_aggregate,
    })
}

/// Convex combination of the bundle with the subproblem multipliers.
pub fn aggregate(
    state: &SolverState,
    mult: &Multipliers,
    params: &SolverParams,
) -> Result<Aggregation, BundleError> {
    let m = state.entries.len();
    if mult.lambda.len() != m || mult.mu.len() != m {
        return Err(BundleError::InconsistentMultipliers(format!(
            "{} / {} multipliers for {m} bundle entries",
            mult.lambda.len(),
            mult.mu.len()
        )));
    }
    let all = mult
        .lambda
        .iter()
        .chain(&mult.mu)
        .chain([&mult.lambda_p, &mult.mu_p]);
    for v in all {
        if !v.is_finite() || *v < -MULTIPLIER_TOL {
            return Err(BundleError::InconsistentMultipliers(format!("multiplier {v}")));
        }
    }
    let lambda_sum: f64 = mult.lambda.iter().sum::<f64>() + mult.lambda_p;
    if (lambda_sum - 1.0).abs() > 1e-6 {
        return Err(BundleError::InconsistentMultipliers(format!(
            "objective multipliers sum to {lambda_sum}"
        )));
    }
    let clip = |v: f64| v.max(0.0);
    let n = state.dim();
    let agg = &state.agg;

    let mut g = &agg.g * clip(mult.lambda_p);
    let mut f = clip(mult.lambda_p) * agg.f;
    let mut hess_next = &agg.hess * clip(mult.lambda_p);
    let mut s = clip(mult.lambda_p) * agg.s;
    for (e, &l) in state.entries.iter().zip(&mult.lambda) {
        let l = clip(l);
        g += &e.g * l;
        f += l * e.f;
        hess_next += e.damped_hess() * l;
        s += l * e.s;
    }
    let alpha = (state.f - f).abs().max(params.gamma1 * s.powf(params.omega1));

    let kappa_bar: f64 = mult.mu.iter().map(|v| clip(*v)).sum::<f64>() + clip(mult.mu_p);
    let (kappa, kappa_p) = if kappa_bar > 0.0 {
        (
            mult.mu.iter().map(|v| clip(*v) / kappa_bar).collect::<Vec<_>>(),
            clip(mult.mu_p) / kappa_bar,
        )
    } else {
        (vec![0.0; m], 0.0)
    };
    let mut cons_g = &agg.cons_g * kappa_p;
    let mut cons = kappa_p * agg.cons;
    let mut cons_hess_next = &agg.cons_hess * kappa_p;
    let mut cons_s = kappa_p * agg.cons_s;
    for (e, &kj) in state.entries.iter().zip(&kappa) {
        cons_g += &e.cons_g * kj;
        cons += kj * e.cons;
        cons_hess_next += e.damped_cons_hess() * kj;
        cons_s += kj * e.s;
    }
    let cons_alpha = (state.cons - cons).abs().max(params.gamma2 * cons_s.powf(params.omega2));
    debug_assert_eq!(g.len(), n);

    Ok(Aggregation {
        g,
        f,
        hess_next,
        s,
        alpha,
        cons_g,
        cons,
        cons_hess_next,
        cons_s,
        cons_alpha,
        kappa_bar,
        kappa,
        kappa_p,
        lambda_newest: clip(*mult.lambda.last().expect("bundle is never empty")),
    })
}

/// Moves the state to iteration `k + 1` after a line search.
pub fn update_after_step(
    state: &mut SolverState,
    step: &StepData,
    aggregation: &Aggregation,
    params: &SolverParams,
) -> Result<(), BundleError> {
    if !(step.cons_next < 0.0) {
        return Err(BundleError::InfeasibleIterate { cons: step.cons_next });
    }
    let delta = &step.delta;
    let len = delta.norm();
    let x_next = &state.x + delta;

    let rho = if state.i_n <= params.i_rho {
        damping_factor(spectral_norm(&step.sample.hess)?, params.c_g)
    } else {
        0.0
    };
    let rho_hat = damping_factor(spectral_norm(&step.sample.cons_hess)?, params.c_g_hat);

    if step.serious {
        state.i_n = 0;
        state.i_s += 1;
    } else {
        state.i_n += 1;
    }

    if len > 0.0 {
        for e in &mut state.entries {
            e.shift(delta, len);
        }
    }
    let a = aggregation;
    state.agg = AggregateState {
        f: a.f + a.g.dot(delta) + 0.5 * quad_form(&a.hess_next, delta),
        g: &a.g + &a.hess_next * delta,
        hess: a.hess_next.clone(),
        s: a.s + len,
        cons: a.cons + a.cons_g.dot(delta) + 0.5 * quad_form(&a.cons_hess_next, delta),
        cons_g: &a.cons_g + &a.cons_hess_next * delta,
        cons_hess: a.cons_hess_next.clone(),
        cons_s: a.cons_s + len,
    };

    state
        .entries
        .push(BundleEntry::new(state.k + 1, &step.sample, &x_next, rho, rho_hat));
    let cap = params.bundle_capacity(state.dim());
    if state.entries.len() > cap {
        let excess = state.entries.len() - cap;
        state.entries.drain(..excess);
    }

    state.x = x_next;
    state.f = step.f_next;
    state.cons = step.cons_next;
    state.kappa_bar = a.kappa_bar;
    state.lambda_newest_prev = a.lambda_newest;
    state.serious_history = [step.serious, state.serious_history[0]];
    state.k += 1;
    Ok(())
}
