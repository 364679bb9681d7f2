//! Invariant checks along a run and on random subproblems.

use nalgebra::DVector;
use qcbundle::linalg::quad_form;
use qcbundle::qcqp::{brute_force_reference, random_instance, solve_search_direction, QcqpTolerances};
use qcbundle::{run_with_callback, Problem, SolverError, SolverParams, SolverReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CHAIN_SLACK: f64 = 1e-7;
const IDENTITY_TOL: f64 = 1e-8;
const REFERENCE_TOL: f64 = 1e-6;
const RANDOM_INSTANCES: usize = 100;

pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Default)]
struct Tally {
    checked: usize,
    failures: usize,
    first: Option<String>,
}

impl Tally {
    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(what());
            }
        }
    }

    fn line(self, name: &'static str) -> CheckLine {
        let detail = match &self.first {
            None => format!("{} checked", self.checked),
            Some(f) => format!("{} of {} violated, first: {f}", self.failures, self.checked),
        };
        CheckLine {
            name,
            passed: self.failures == 0,
            detail,
        }
    }
}

/// Runs the solver and checks, at every iteration, the predicted-decrease
/// chain `v̂ ≤ v ≤ 0 ≤ w ≤ ŵ`, the identity `w = −½dᵀW̄d − v`, strict
/// feasibility of the iterate and the subproblem duality gap; then compares
/// the subproblem solver with the reference method on seeded random
/// instances.
pub fn check_run(
    problem: &Problem,
    params: &SolverParams,
    x1: &DVector<f64>,
    seed: u64,
) -> (Result<SolverReport, SolverError>, Vec<CheckLine>) {
    let tol = params.qp_tolerances();
    let mut chain = Tally::default();
    let mut identity = Tally::default();
    let mut feasible = Tally::default();
    let mut gap = Tally::default();
    let result = run_with_callback(problem, params, x1, |s| {
        let r = s.record;
        let (v_hat, v, w, w_hat) = (r.v_hat, r.v, r.w, s.solution.w_hat);
        let slack = CHAIN_SLACK * v_hat.abs().max(1.0);
        chain.record(
            v_hat <= v + slack && v <= slack && -slack <= w && w <= w_hat + slack,
            || format!("k={}: v̂={v_hat:e} v={v:e} w={w:e} ŵ={w_hat:e}", r.k),
        );
        let residual = w + 0.5 * quad_form(&s.instance.w_bar, &s.solution.d) + v;
        identity.record(residual.abs() <= IDENTITY_TOL * w.abs().max(1.0), || {
            format!("k={}: residual {residual:e}", r.k)
        });
        feasible.record(r.cons < 0.0, || format!("k={}: F={:e}", r.k, r.cons));
        gap.record(s.solution.gap_ok(&tol), || format!("k={}: gap {:e}", r.k, s.solution.gap));
    });
    let mut lines = vec![
        chain.line("chain v̂ ≤ v ≤ 0 ≤ w ≤ ŵ"),
        identity.line("identity w = −½dᵀW̄d − v"),
        feasible.line("strict feasibility"),
        gap.line("subproblem duality gap"),
    ];
    lines.push(random_subproblems(seed, &tol));
    (result, lines)
}

fn random_subproblems(seed: u64, tol: &QcqpTolerances) -> CheckLine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for i in 0..RANDOM_INSTANCES {
        let inst = random_instance(&mut rng);
        let outcome = solve_search_direction(&inst, tol).and_then(|sol| {
            let r = brute_force_reference(&inst)?;
            Ok((&sol.d - &r.d).amax().max((sol.v_hat - r.v_hat).abs()))
        });
        match outcome {
            Ok(diff) => tally.record(diff <= REFERENCE_TOL, || format!("instance {i}: difference {diff:e}")),
            Err(e) => tally.record(false, || format!("instance {i}: {e}")),
        }
    }
    tally.line("subproblem solver vs reference")
}
