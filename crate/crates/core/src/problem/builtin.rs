//! Built-in test problems with exact subgradients and Hessians.

use nalgebra::{dmatrix, dvector, DVector};

use super::{Evaluation, Problem, ProblemError};
use crate::linalg::SymMatrix;

const NAMES: [&str; 5] = ["maratos", "nonconvex-min", "nonconvex-min-hat", "abs", "maxq"];

pub fn builtin_names() -> &'static [&'static str] {
    &NAMES
}

fn trivially_feasible(n: usize) -> impl Fn(&DVector<f64>) -> Evaluation + Send + Sync {
    move |_| Evaluation::new(-1.0, DVector::zeros(n)).with_hessian(SymMatrix::zeros(n, n))
}

// F1 = x1² + x2², F2 = -x1 + x2², F3 = x1 - 2
fn piece(i: usize, x: &DVector<f64>) -> Evaluation {
    match i {
        1 => Evaluation::new(x[0] * x[0] + x[1] * x[1], dvector![2.0 * x[0], 2.0 * x[1]])
            .with_hessian(dmatrix![2.0, 0.0; 0.0, 2.0]),
        2 => Evaluation::new(-x[0] + x[1] * x[1], dvector![-1.0, 2.0 * x[1]])
            .with_hessian(dmatrix![0.0, 0.0; 0.0, 2.0]),
        _ => Evaluation::new(x[0] - 2.0, dvector![1.0, 0.0]).with_hessian(SymMatrix::zeros(2, 2)),
    }
}

fn min_f1_f2(x: &DVector<f64>) -> Evaluation {
    let a = piece(1, x);
    let b = piece(2, x);
    if a.value <= b.value {
        a
    } else {
        b
    }
}

fn linear_x2(x: &DVector<f64>) -> Evaluation {
    Evaluation::new(x[1], dvector![0.0, 1.0]).with_hessian(SymMatrix::zeros(2, 2))
}

/// Looks up a built-in problem by name.
pub fn builtin_problem(name: &str) -> Result<Problem, ProblemError> {
    let p = match name {
        "maratos" => Problem::new(name, 2, linear_x2)
            .constraint(|x: &DVector<f64>| {
                Evaluation::new(x[0] * x[0] - x[1], dvector![2.0 * x[0], -1.0])
                    .with_hessian(dmatrix![2.0, 0.0; 0.0, 0.0])
            })
            .minimizer(dvector![0.0, 0.0])
            .start(dvector![1.0, 2.0]),
        "nonconvex-min" => Problem::new(name, 2, linear_x2)
            .constraint(min_f1_f2)
            .constraint(|x: &DVector<f64>| piece(3, x))
            .minimizer(dvector![2.0, -(2.0f64).sqrt()])
            .start(dvector![1.0, 0.0]),
        "nonconvex-min-hat" => Problem::new(name, 2, linear_x2)
            .constraint(|x: &DVector<f64>| piece(2, x))
            .constraint(|x: &DVector<f64>| piece(3, x))
            .minimizer(dvector![2.0, -(2.0f64).sqrt()])
            .start(dvector![1.0, 0.0]),
        "abs" => Problem::new(name, 1, |x: &DVector<f64>| {
            let g = if x[0] >= 0.0 { 1.0 } else { -1.0 };
            Evaluation::new(x[0].abs(), dvector![g]).with_hessian(SymMatrix::zeros(1, 1))
        })
        .constraint(trivially_feasible(1))
        .minimizer(dvector![0.0])
        .start(dvector![5.0]),
        "maxq" => Problem::new(name, 2, |x: &DVector<f64>| {
            let i = if x[0] * x[0] >= x[1] * x[1] { 0 } else { 1 };
            let mut g = DVector::zeros(2);
            g[i] = 2.0 * x[i];
            let mut h = SymMatrix::zeros(2, 2);
            h[(i, i)] = 2.0;
            Evaluation::new(x[i] * x[i], g).with_hessian(h)
        })
        .constraint(trivially_feasible(2))
        .minimizer(dvector![0.0, 0.0])
        .start(dvector![3.0, -2.0]),
        _ => {
            return Err(ProblemError::UnknownProblem {
                name: name.to_string(),
                valid: NAMES.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::evaluate;

    #[test]
    fn registry_is_complete() {
        for name in builtin_names() {
            let p = builtin_problem(name).unwrap();
            assert_eq!(p.name(), *name);
            let x0 = p.default_start().unwrap();
            let s = evaluate(&p, x0).unwrap();
            assert!(s.cons < 0.0, "{name} start must be strictly feasible");
            let xs = p.known_minimizer().unwrap();
            let s = evaluate(&p, xs).unwrap();
            assert!(s.cons <= 1e-12, "{name} minimizer must be feasible");
        }
    }

    #[test]
    fn unknown_name_lists_valid_names() {
        match builtin_problem("rosenbrock") {
            Err(ProblemError::UnknownProblem { valid, .. }) => {
                assert_eq!(valid.len(), NAMES.len());
                assert!(valid.iter().any(|v| v == "maratos"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn abs_subgradient_at_kink() {
        let p = builtin_problem("abs").unwrap();
        let s = evaluate(&p, &dvector![0.0]).unwrap();
        assert_eq!((s.f, s.g[0]), (0.0, 1.0));
    }

    #[test]
    fn nonconvex_min_hat_minimizer_is_on_both_pieces() {
        let p = builtin_problem("nonconvex-min-hat").unwrap();
        let x = dvector![2.0, -(2.0f64).sqrt()];
        let s = evaluate(&p, &x).unwrap();
        assert!(s.cons.abs() < 1e-15);
        assert_eq!(s.f, -(2.0f64).sqrt());
    }
}
