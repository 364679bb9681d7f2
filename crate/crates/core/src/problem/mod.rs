//! Problem definitions: oracles for the objective and the constraints,
//! scalarization of several constraints into one, and the sampled data the
//! solver consumes at each trial point.

mod builtin;

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{symmetrize, SymMatrix};

pub use builtin::{builtin_problem, builtin_names};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("oracle failure at {point:?}: {message}")]
    OracleFailure { point: Vec<f64>, message: String },
    #[error("unknown problem `{name}`; valid names: {}", valid.join(", "))]
    UnknownProblem { name: String, valid: Vec<String> },
}

/// What a user oracle returns at a query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// One element of the Clarke subdifferential.
    pub subgradient: DVector<f64>,
    /// Hessian substitute; `None` lets the solver approximate it.
    pub hessian: Option<SymMatrix>,
}

impl Evaluation {
    pub fn new(value: f64, subgradient: DVector<f64>) -> Self {
        Evaluation {
            value,
            subgradient,
            hessian: None,
        }
    }

    pub fn with_hessian(mut self, hessian: SymMatrix) -> Self {
        self.hessian = Some(hessian);
        self
    }
}

/// A function oracle. Must be a pure function of the query point.
pub trait Oracle: Send + Sync {
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, String>;
}

impl<F> Oracle for F
where
    F: Fn(&DVector<f64>) -> Evaluation + Send + Sync,
{
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, String> {
        Ok(self(x))
    }
}

/// Which side of the problem a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Objective,
    Constraint,
}

/// `min f(x) s.t. F_i(x) <= 0`, with the constraints combined into
/// `F(x) = max_i c_i F_i(x)`.
#[derive(Clone)]
pub struct Problem {
    name: String,
    dim: usize,
    objective: Arc<dyn Oracle>,
    constraints: Vec<Arc<dyn Oracle>>,
    weights: Vec<f64>,
    minimizer: Option<DVector<f64>>,
    start: Option<DVector<f64>>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("constraints", &self.constraints.len())
            .field("weights", &self.weights)
            .finish()
    }
}

impl Problem {
    pub fn new(name: impl Into<String>, dim: usize, objective: impl Oracle + 'static) -> Self {
        Problem {
            name: name.into(),
            dim,
            objective: Arc::new(objective),
            constraints: Vec::new(),
            weights: Vec::new(),
            minimizer: None,
            start: None,
        }
    }

    /// Adds a constraint `F_i(x) <= 0` with weight 1.
    pub fn constraint(mut self, oracle: impl Oracle + 'static) -> Self {
        self.constraints.push(Arc::new(oracle));
        self.weights.push(1.0);
        self
    }

    pub fn weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn minimizer(mut self, x: DVector<f64>) -> Self {
        self.minimizer = Some(x);
        self
    }

    pub fn start(mut self, x: DVector<f64>) -> Self {
        self.start = Some(x);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn known_minimizer(&self) -> Option<&DVector<f64>> {
        self.minimizer.as_ref()
    }

    pub fn default_start(&self) -> Option<&DVector<f64>> {
        self.start.as_ref()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.dim == 0 {
            return Err(ProblemError::InvalidProblem("dimension must be positive".into()));
        }
        if self.constraints.is_empty() {
            return Err(ProblemError::InvalidProblem("at least one constraint is required".into()));
        }
        if self.weights.len() != self.constraints.len() {
            return Err(ProblemError::InvalidProblem(format!(
                "{} weights for {} constraints",
                self.weights.len(),
                self.constraints.len()
            )));
        }
        if self.weights.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(ProblemError::InvalidProblem("weights must be positive".into()));
        }
        Ok(())
    }

    fn call(&self, oracle: &dyn Oracle, x: &DVector<f64>) -> Result<Evaluation, ProblemError> {
        let failure = |message: String| ProblemError::OracleFailure {
            point: x.iter().copied().collect(),
            message,
        };
        let eval = match catch_unwind(AssertUnwindSafe(|| oracle.evaluate(x))) {
            Ok(Ok(e)) => e,
            Ok(Err(msg)) => return Err(failure(msg)),
            Err(_) => return Err(failure("oracle panicked".into())),
        };
        if !eval.value.is_finite() {
            return Err(failure(format!("non-finite value {}", eval.value)));
        }
        if eval.subgradient.len() != self.dim {
            return Err(failure(format!(
                "subgradient has length {}, expected {}",
                eval.subgradient.len(),
                self.dim
            )));
        }
        if eval.subgradient.iter().any(|v| !v.is_finite()) {
            return Err(failure("non-finite subgradient".into()));
        }
        if let Some(h) = &eval.hessian {
            if h.nrows() != self.dim || h.ncols() != self.dim {
                return Err(failure(format!(
                    "Hessian substitute is {}x{}, expected {}x{}",
                    h.nrows(),
                    h.ncols(),
                    self.dim,
                    self.dim
                )));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(failure("non-finite Hessian substitute".into()));
            }
        }
        Ok(eval)
    }

    /// Objective value and subgradient (Hessian as supplied by the user).
    pub fn objective_at(&self, x: &DVector<f64>) -> Result<Evaluation, ProblemError> {
        self.call(self.objective.as_ref(), x)
    }

    /// Scalarized constraint `max_i c_i F_i(x)` with the subgradient and
    /// Hessian of the active piece, scaled by its weight.
    pub fn constraint_at(&self, x: &DVector<f64>) -> Result<Evaluation, ProblemError> {
        let evals = self
            .constraints
            .iter()
            .map(|c| self.call(c.as_ref(), x))
            .collect::<Result<Vec<_>, _>>()?;
        let values: Vec<f64> = evals.iter().map(|e| e.value).collect();
        let (value, active) = scalarize_constraints(&values, &self.weights).map_err(|e| match e {
            ProblemError::OracleFailure { message, .. } => ProblemError::OracleFailure {
                point: x.iter().copied().collect(),
                message,
            },
            other => other,
        })?;
        let c = self.weights[active];
        let mut eval = evals.into_iter().nth(active).expect("active index in range");
        eval.value = value;
        if c != 1.0 {
            eval.subgradient *= c;
            if let Some(h) = eval.hessian.as_mut() {
                *h *= c;
            }
        }
        Ok(eval)
    }

    fn side_at(&self, x: &DVector<f64>, side: Side) -> Result<Evaluation, ProblemError> {
        match side {
            Side::Objective => self.objective_at(x),
            Side::Constraint => self.constraint_at(x),
        }
    }
}

/// `max_i c_i v_i` together with the smallest maximizing index.
pub fn scalarize_constraints(values: &[f64], weights: &[f64]) -> Result<(f64, usize), ProblemError> {
    if values.is_empty() {
        return Err(ProblemError::InvalidProblem("no constraint values".into()));
    }
    if values.len() != weights.len() {
        return Err(ProblemError::InvalidProblem(format!(
            "{} values for {} weights",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(ProblemError::InvalidProblem("weights must be positive".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(ProblemError::OracleFailure {
            point: Vec::new(),
            message: format!("non-finite constraint value {v}"),
        });
    }
    let mut best = (weights[0] * values[0], 0);
    for (i, (v, c)) in values.iter().zip(weights).enumerate().skip(1) {
        let cv = c * v;
        if cv > best.0 {
            best = (cv, i);
        }
    }
    Ok(best)
}

/// All oracle data at one trial point `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub point: DVector<f64>,
    pub f: f64,
    pub g: DVector<f64>,
    pub hess: SymMatrix,
    pub cons: f64,
    pub cons_g: DVector<f64>,
    pub cons_hess: SymMatrix,
}

/// Evaluates objective and scalarized constraint at `x`, filling in missing
/// Hessian substitutes with [`default_hessian`].
pub fn evaluate(problem: &Problem, x: &DVector<f64>) -> Result<OracleSample, ProblemError> {
    problem.validate()?;
    if x.len() != problem.dim {
        return Err(ProblemError::InvalidProblem(format!(
            "point has dimension {}, problem has {}",
            x.len(),
            problem.dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProblemError::OracleFailure {
            point: x.iter().copied().collect(),
            message: "non-finite query point".into(),
        });
    }
    let obj = problem.objective_at(x)?;
    let con = problem.constraint_at(x)?;
    let hess = match obj.hessian {
        Some(h) => symmetrize(&h),
        None => default_hessian(problem, x, Side::Objective),
    };
    let cons_hess = match con.hessian {
        Some(h) => symmetrize(&h),
        None => default_hessian(problem, x, Side::Constraint),
    };
    Ok(OracleSample {
        point: x.clone(),
        f: obj.value,
        g: obj.subgradient,
        hess,
        cons: con.value,
        cons_g: con.subgradient,
        cons_hess,
    })
}

/// Central finite differences of the subgradient map, symmetrized. Falls back
/// to the identity if any probe fails.
pub fn default_hessian(problem: &Problem, x: &DVector<f64>, side: Side) -> SymMatrix {
    let n = problem.dim;
    let h = (1e-6 * x.amax()).max(1e-6);
    let mut jac = SymMatrix::zeros(n, n);
    for i in 0..n {
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let (gp, gm) = match (problem.side_at(&plus, side), problem.side_at(&minus, side)) {
            (Ok(a), Ok(b)) => (a.subgradient, b.subgradient),
            _ => return SymMatrix::identity(n, n),
        };
        let col = (gp - gm) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return SymMatrix::identity(n, n);
        }
        jac.set_column(i, &col);
    }
    symmetrize(&jac)
}
