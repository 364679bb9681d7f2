//! Random well-posed subproblems for testing the solver against the
//! reference method.

use nalgebra::DVector;
use rand::Rng;

use super::{Cut, QcqpInstance};
use crate::linalg::SymMatrix;

fn spd(rng: &mut impl Rng, n: usize) -> SymMatrix {
    let b = SymMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + SymMatrix::identity(n, n) * 0.1
}

/// A cut with gradient entries in `[−2, 2)`, error in `[0, 1)` and a
/// positive definite curvature.
pub fn random_cut(rng: &mut impl Rng, n: usize) -> Cut {
    Cut::new(
        DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
        rng.gen_range(0.0..1.0),
        spd(rng, n),
    )
}

/// An instance with `n ≤ 3`, at most three rows per side (aggregate rows
/// included) and `F(x) ∈ [−2, −0.1)`.
pub fn random_instance(rng: &mut impl Rng) -> QcqpInstance {
    let n = rng.gen_range(1..=3);
    let no = rng.gen_range(1..=3);
    let nc = rng.gen_range(0..=3);
    let mut objective_cuts: Vec<Cut> = (0..no).map(|_| random_cut(rng, n)).collect();
    let mut constraint_cuts: Vec<Cut> = (0..nc).map(|_| random_cut(rng, n)).collect();
    let objective_aggregate = if no >= 2 && rng.gen_bool(0.5) {
        objective_cuts.pop()
    } else {
        None
    };
    let constraint_aggregate = if nc >= 1 && rng.gen_bool(0.5) {
        constraint_cuts.pop()
    } else {
        None
    };
    QcqpInstance {
        w_bar: spd(rng, n),
        objective_cuts,
        objective_aggregate,
        constraint_cuts,
        constraint_aggregate,
        cons: rng.gen_range(-2.0..-0.1),
    }
}
