//! The convex QCQP that yields the search direction:
//!
//! ```text
//! min  v + ½ dᵀW̄d
//! s.t. −α_j + g_jᵀd + ½ dᵀḠ_jd ≤ v          (objective cuts)
//!      F − A_j + ĝ_jᵀd + ½ dᵀĜ̄_jd ≤ 0       (constraint cuts)
//! ```
//!
//! Solved by a primal log-barrier method; the multipliers are recovered and
//! the result is certified by its duality gap.

mod ipm;
mod reference;
mod sample;

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{quad_form, solve_spd, LinalgError, SymMatrix};

pub use reference::brute_force_reference;
pub use sample::{random_cut, random_instance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcqpError {
    #[error("invalid subproblem instance: {0}")]
    InvalidInstance(String),
    #[error("subproblem not solved after {iterations} iterations (gap {gap:e}, infeasibility {infeasibility:e})")]
    NotConverged {
        iterations: usize,
        gap: f64,
        infeasibility: f64,
        best: Option<Box<SubproblemSolution>>,
    },
    #[error("no KKT-consistent candidate found by the reference solver")]
    ReferenceFailed,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A quadratic cut `offset + gᵀd + ½dᵀ curvature d`, with `offset = −α` for
/// objective cuts and `offset = F − A` for constraint cuts. `error` holds
/// `α` or `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub g: DVector<f64>,
    pub error: f64,
    pub curvature: SymMatrix,
}

impl Cut {
    pub fn new(g: DVector<f64>, error: f64, curvature: SymMatrix) -> Self {
        Cut { g, error, curvature }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpInstance {
    pub w_bar: SymMatrix,
    pub objective_cuts: Vec<Cut>,
    pub objective_aggregate: Option<Cut>,
    pub constraint_cuts: Vec<Cut>,
    pub constraint_aggregate: Option<Cut>,
    /// `F(x_k)`, the common offset of the constraint cuts.
    pub cons: f64,
}

/// Lagrange multipliers of the objective cuts (`lambda`, `lambda_p`) and of
/// the constraint cuts (`mu`, `mu_p`). Aggregate multipliers are zero when
/// the aggregate rows are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    pub lambda_p: f64,
    pub mu: Vec<f64>,
    pub mu_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub d: DVector<f64>,
    /// `v̂` from the multiplier formula; equals the epigraph value at the
    /// optimum.
    pub v_hat: f64,
    /// Smallest feasible epigraph value at `d`.
    pub v_epigraph: f64,
    pub multipliers: Multipliers,
    /// `v_epigraph + ½dᵀW̄d`.
    pub primal: f64,
    /// Dual value `ŵ` written as a minimization; strong duality reads
    /// `primal = −ŵ`.
    pub w_hat: f64,
    /// `primal + ŵ ≥ 0`.
    pub gap: f64,
    /// Largest row violation at `(d, v_epigraph)`.
    pub infeasibility: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcqpTolerances {
    pub kkt_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for QcqpTolerances {
    fn default() -> Self {
        QcqpTolerances {
            kkt_tol: 1e-9,
            gap_tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Uniform view on a row: `q(d, v) = ½dᵀQd + gᵀd + b − [epigraph] v`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Row<'a> {
    pub q: &'a SymMatrix,
    pub g: &'a DVector<f64>,
    pub b: f64,
    pub epigraph: bool,
}

impl Row<'_> {
    pub fn value(&self, d: &DVector<f64>, v: f64) -> f64 {
        let e = if self.epigraph { v } else { 0.0 };
        0.5 * quad_form(self.q, d) + self.g.dot(d) + self.b - e
    }

    /// Model value of the row without the epigraph variable.
    pub fn model(&self, d: &DVector<f64>) -> f64 {
        0.5 * quad_form(self.q, d) + self.g.dot(d) + self.b
    }

    pub fn grad_d(&self, d: &DVector<f64>) -> DVector<f64> {
        self.q * d + self.g
    }
}

impl QcqpInstance {
    pub fn dim(&self) -> usize {
        self.w_bar.nrows()
    }

    pub(crate) fn num_objective_rows(&self) -> usize {
        self.objective_cuts.len() + usize::from(self.objective_aggregate.is_some())
    }

    /// Rows in the order: objective cuts, objective aggregate, constraint
    /// cuts, constraint aggregate.
    pub(crate) fn rows(&self) -> Vec<Row<'_>> {
        let obj = self
            .objective_cuts
            .iter()
            .chain(self.objective_aggregate.as_ref())
            .map(|c| Row {
                q: &c.curvature,
                g: &c.g,
                b: -c.error,
                epigraph: true,
            });
        let con = self
            .constraint_cuts
            .iter()
            .chain(self.constraint_aggregate.as_ref())
            .map(|c| Row {
                q: &c.curvature,
                g: &c.g,
                b: self.cons - c.error,
                epigraph: false,
            });
        obj.chain(con).collect()
    }

    /// Flattens multipliers into row order.
    pub(crate) fn flatten(&self, m: &Multipliers) -> Vec<f64> {
        let mut out = m.lambda.clone();
        if self.objective_aggregate.is_some() {
            out.push(m.lambda_p);
        }
        out.extend(&m.mu);
        if self.constraint_aggregate.is_some() {
            out.push(m.mu_p);
        }
        out
    }

    pub(crate) fn unflatten(&self, flat: &[f64]) -> Multipliers {
        let no = self.objective_cuts.len();
        let nc = self.constraint_cuts.len();
        let mut i = 0;
        let lambda = flat[i..i + no].to_vec();
        i += no;
        let lambda_p = if self.objective_aggregate.is_some() {
            i += 1;
            flat[i - 1]
        } else {
            0.0
        };
        let mu = flat[i..i + nc].to_vec();
        i += nc;
        let mu_p = if self.constraint_aggregate.is_some() { flat[i] } else { 0.0 };
        Multipliers {
            lambda,
            lambda_p,
            mu,
            mu_p,
        }
    }

    fn check_structure(&self) -> Result<(), QcqpError> {
        let n = self.dim();
        let bad = |m: String| Err(QcqpError::InvalidInstance(m));
        if n == 0 || !self.w_bar.is_square() {
            return bad("objective curvature must be a nonempty square matrix".into());
        }
        if self.objective_cuts.is_empty() {
            return bad("at least one objective cut is required".into());
        }
        if !self.cons.is_finite() {
            return bad(format!("non-finite constraint value {}", self.cons));
        }
        let cuts = self
            .objective_cuts
            .iter()
            .chain(&self.objective_aggregate)
            .chain(&self.constraint_cuts)
            .chain(&self.constraint_aggregate);
        for c in cuts {
            if c.g.len() != n || c.curvature.nrows() != n || c.curvature.ncols() != n {
                return bad("cut dimensions do not match".into());
            }
            if !(c.error.is_finite() && c.error >= 0.0) {
                return bad(format!("approximation error {} must be nonnegative", c.error));
            }
            if c.g.iter().chain(c.curvature.iter()).any(|v| !v.is_finite()) {
                return bad("non-finite cut data".into());
            }
        }
        for m in std::iter::once(&self.w_bar).chain(self.rows().iter().map(|r| r.q)) {
            if m.iter().any(|v| !v.is_finite()) || m.clone().cholesky().is_none() {
                return bad("curvature matrix is not positive definite".into());
            }
        }
        Ok(())
    }

    /// Checks every invariant of a well-posed subproblem, including strict
    /// feasibility `F(x_k) < 0`.
    pub fn validate(&self) -> Result<(), QcqpError> {
        self.check_structure()?;
        if !(self.cons < 0.0) {
            return Err(QcqpError::InvalidInstance(format!(
                "constraint value {} is not strictly negative",
                self.cons
            )));
        }
        Ok(())
    }

    /// Equivalent instance in the variables `u = Lᵀd / σ` with `W̄ = LLᵀ`,
    /// so that `W̄` becomes the identity and the linear terms are of unit
    /// size; all rows are divided by `σ²`, which leaves the multipliers
    /// unchanged. Returns the instance and the map `d = T u`.
    fn normalized(&self) -> Option<(QcqpInstance, SymMatrix)> {
        let n = self.dim();
        let l = self.w_bar.clone().cholesky()?.l();
        let l_inv = l.clone().try_inverse()?;
        let cuts = self
            .objective_cuts
            .iter()
            .chain(&self.objective_aggregate)
            .chain(&self.constraint_cuts)
            .chain(&self.constraint_aggregate);
        let _ = cuts;
        let sigma = 1.0;
        let s2 = sigma * sigma;
        let map = |c: &Cut| {
            let q = &l_inv * &c.curvature * l_inv.transpose();
            Cut::new(&l_inv * &c.g / sigma, c.error / s2, (&q + q.transpose()) * 0.5)
        };
        let scaled = QcqpInstance {
            w_bar: SymMatrix::identity(n, n),
            objective_cuts: self.objective_cuts.iter().map(map).collect(),
            objective_aggregate: self.objective_aggregate.as_ref().map(map),
            constraint_cuts: self.constraint_cuts.iter().map(map).collect(),
            constraint_aggregate: self.constraint_aggregate.as_ref().map(map),
            cons: self.cons / s2,
        };
        let t = l_inv.transpose() * sigma;
        Some((scaled, t))
    }

    fn system(&self, m: &Multipliers) -> (SymMatrix, DVector<f64>) {
        let mut mat = self.w_bar.clone();
        let mut rhs = DVector::zeros(self.dim());
        for (row, w) in self.rows().iter().zip(self.flatten(m)) {
            if w != 0.0 {
                mat += row.q * w;
                rhs += row.g * w;
            }
        }
        (mat, rhs)
    }

    /// The matrix `H⁻² = W̄ + Σλ_jḠ_j + λ_pḠ + Σμ_jĜ̄_j + μ_pĜ̄`.
    pub fn combined_curvature(&self, m: &Multipliers) -> SymMatrix {
        self.system(m).0
    }

    /// Primal objective `v + ½dᵀW̄d`.
    pub fn primal_objective(&self, d: &DVector<f64>, v: f64) -> f64 {
        v + 0.5 * quad_form(&self.w_bar, d)
    }

    /// Smallest `v` making all objective rows feasible at `d`.
    pub fn epigraph_value(&self, d: &DVector<f64>) -> f64 {
        self.rows()
            .iter()
            .filter(|r| r.epigraph)
            .map(|r| r.model(d))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest constraint-row violation at `d` (objective rows are feasible
    /// by the choice of the epigraph value).
    pub fn infeasibility(&self, d: &DVector<f64>) -> f64 {
        self.rows()
            .iter()
            .filter(|r| !r.epigraph)
            .map(|r| r.model(d))
            .fold(0.0, f64::max)
    }

    /// `v̂` from the multiplier formula.
    pub fn v_hat_from_multipliers(&self, m: &Multipliers, d: &DVector<f64>) -> f64 {
        // b = −α on objective rows and F − A on constraint rows
        let mut out = -quad_form(&self.w_bar, d);
        for (row, w) in self.rows().iter().zip(self.flatten(m)) {
            out += w * (row.b - 0.5 * quad_form(row.q, d));
        }
        out
    }
}

/// `d = −(W̄ + Σ…)⁻¹(Σλg + λ_pg_p + Σμĝ + μ_pĝ_p)`.
pub fn direction_from_multipliers(inst: &QcqpInstance, m: &Multipliers) -> Result<DVector<f64>, QcqpError> {
    let (mat, rhs) = inst.system(m);
    Ok(-solve_spd(&mat, &rhs)?)
}

/// Dual value `ŵ = ½bᵀM⁻¹b + Σλα + ΣμA − (Σμ)F`, written as a minimization.
pub fn dual_objective(inst: &QcqpInstance, m: &Multipliers) -> Result<f64, QcqpError> {
    let (mat, rhs) = inst.system(m);
    let sol = solve_spd(&mat, &rhs)?;
    let mut out = 0.5 * rhs.dot(&sol);
    for (row, w) in inst.rows().iter().zip(inst.flatten(m)) {
        out -= w * row.b;
    }
    Ok(out)
}

/// Builds the certified solution for multipliers `m` at direction `d`.
pub(crate) fn certify(
    inst: &QcqpInstance,
    m: Multipliers,
    d: DVector<f64>,
    iterations: usize,
) -> Result<SubproblemSolution, QcqpError> {
    let v_epigraph = inst.epigraph_value(&d);
    let primal = inst.primal_objective(&d, v_epigraph);
    let w_hat = dual_objective(inst, &m)?;
    Ok(SubproblemSolution {
        v_hat: inst.v_hat_from_multipliers(&m, &d),
        infeasibility: inst.infeasibility(&d),
        v_epigraph,
        primal,
        w_hat,
        gap: primal + w_hat,
        d,
        multipliers: m,
        iterations,
    })
}

impl SubproblemSolution {
    fn scale(&self) -> f64 {
        self.primal.abs().max(1.0)
    }

    pub fn gap_ok(&self, tol: &QcqpTolerances) -> bool {
        self.gap.abs() <= tol.gap_tol * self.scale()
    }

    pub fn feasible(&self, tol: &QcqpTolerances) -> bool {
        self.infeasibility <= 10.0 * tol.kkt_tol * self.scale()
    }
}

/// Solves the subproblem and certifies the result by its duality gap.
pub fn solve_search_direction(
    inst: &QcqpInstance,
    tol: &QcqpTolerances,
) -> Result<SubproblemSolution, QcqpError> {
    inst.validate()?;
    let out = match inst.normalized() {
        Some((scaled, t)) => {
            let mut out = ipm::solve(&scaled, tol)?;
            out.d = t * out.d;
            out
        }
        None => ipm::solve(inst, tol)?,
    };
    let mut candidates = Vec::new();
    for m in &out.candidates {
        let d = direction_from_multipliers(inst, m)?;
        candidates.push(certify(inst, m.clone(), d, out.iterations)?);
    }
    for m in out.candidates.iter().take(out.candidates.len() - 1) {
        candidates.push(certify(inst, m.clone(), out.d.clone(), out.iterations)?);
    }
    // smallest certified gap; ties go to the multiplier-consistent direction
    let accepted = candidates
        .iter()
        .filter(|c| c.feasible(tol) && c.gap_ok(tol))
        .min_by(|a, b| a.gap.abs().total_cmp(&b.gap.abs()))
        .cloned();
    if let Some(sol) = accepted {
        return Ok(sol);
    }
    let best = candidates
        .into_iter()
        .filter(|c| c.feasible(tol))
        .min_by(|a, b| a.gap.abs().total_cmp(&b.gap.abs()));
    Err(QcqpError::NotConverged {
        iterations: out.iterations,
        gap: best.as_ref().map_or(f64::INFINITY, |b| b.gap),
        infeasibility: best.as_ref().map_or(f64::INFINITY, |b| b.infeasibility),
        best: best.map(Box::new),
    })
}

#[cfg(test)]
mod tests;
