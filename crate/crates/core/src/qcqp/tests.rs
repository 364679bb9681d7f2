use super::*;
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::sample::{random_cut, random_instance};
use rand_chacha::ChaCha8Rng;

fn eye(n: usize) -> SymMatrix {
    SymMatrix::identity(n, n)
}

fn cut(rng: &mut ChaCha8Rng, n: usize) -> Cut {
    random_cut(rng, n)
}

fn single_row_instance() -> QcqpInstance {
    QcqpInstance {
        w_bar: eye(2),
        objective_cuts: vec![Cut::new(dvector![1.0, 0.0], 0.0, eye(2))],
        objective_aggregate: None,
        constraint_cuts: vec![Cut::new(dvector![0.0, 1.0], 0.0, eye(2))],
        constraint_aggregate: None,
        cons: -1.0,
    }
}

#[test]
fn single_active_row_closed_form() {
    let inst = single_row_instance();
    let sol = solve_search_direction(&inst, &QcqpTolerances::default()).unwrap();
    assert!((&sol.d - dvector![-0.5, 0.0]).amax() < 1e-9, "{}", sol.d);
    assert!((sol.v_hat + 0.375).abs() < 1e-9);
    assert!((sol.v_epigraph + 0.375).abs() < 1e-9);
    assert!((sol.multipliers.lambda[0] - 1.0).abs() < 1e-12);
    assert_eq!(sol.multipliers.mu, vec![0.0]);
    assert!(sol.gap.abs() < 1e-8);

    let r = brute_force_reference(&inst).unwrap();
    assert!((&r.d - dvector![-0.5, 0.0]).amax() < 1e-10);
    assert!((r.v_hat + 0.375).abs() < 1e-10);
}

#[test]
fn stationary_instance_gives_zero_direction() {
    let inst = QcqpInstance {
        w_bar: eye(2),
        objective_cuts: vec![Cut::new(dvector![0.0, 0.0], 0.0, eye(2))],
        objective_aggregate: None,
        constraint_cuts: vec![],
        constraint_aggregate: None,
        cons: -1.0,
    };
    let sol = solve_search_direction(&inst, &QcqpTolerances::default()).unwrap();
    assert!(sol.d.amax() < 1e-12);
    assert!(sol.v_hat.abs() < 1e-12);
    assert!(sol.w_hat.abs() < 1e-12);
    let r = brute_force_reference(&inst).unwrap();
    assert_eq!(r.d, dvector![0.0, 0.0]);
}

#[test]
fn direction_from_multipliers_examples() {
    let inst = single_row_instance();
    let m = Multipliers {
        lambda: vec![1.0],
        lambda_p: 0.0,
        mu: vec![0.0],
        mu_p: 0.0,
    };
    assert!((direction_from_multipliers(&inst, &m).unwrap() - dvector![-0.5, 0.0]).amax() < 1e-15);
    let mut zero = inst.clone();
    zero.objective_cuts[0].g = dvector![0.0, 0.0];
    zero.constraint_cuts[0].g = dvector![0.0, 0.0];
    let m = Multipliers {
        lambda: vec![1.0],
        lambda_p: 0.0,
        mu: vec![0.7],
        mu_p: 0.0,
    };
    assert_eq!(direction_from_multipliers(&zero, &m).unwrap(), dvector![0.0, 0.0]);
}

#[test]
fn dual_objective_examples() {
    let inst = QcqpInstance {
        w_bar: eye(2),
        objective_cuts: vec![
            Cut::new(dvector![0.0, 0.0], 0.3, eye(2)),
            Cut::new(dvector![1.0, -1.0], 0.0, eye(2) * 2.0),
        ],
        objective_aggregate: None,
        constraint_cuts: vec![],
        constraint_aggregate: None,
        cons: -1.0,
    };
    let on_first = Multipliers {
        lambda: vec![1.0, 0.0],
        lambda_p: 0.0,
        mu: vec![],
        mu_p: 0.0,
    };
    assert!((dual_objective(&inst, &on_first).unwrap() - 0.3).abs() < 1e-15);
    let sol = solve_search_direction(&inst, &QcqpTolerances::default()).unwrap();
    // strong duality
    assert!((sol.primal + sol.w_hat).abs() <= 1e-8 * sol.primal.abs().max(1.0));
    // weak duality for feasible suboptimal multipliers
    for l in [0.0, 0.25, 0.5, 1.0] {
        let m = Multipliers {
            lambda: vec![l, 1.0 - l],
            lambda_p: 0.0,
            mu: vec![],
            mu_p: 0.0,
        };
        assert!(dual_objective(&inst, &m).unwrap() >= sol.w_hat - 1e-10);
    }
}

#[test]
fn rejects_invalid_instances() {
    let tol = QcqpTolerances::default();
    let mut inst = single_row_instance();
    inst.cons = 0.0;
    assert!(matches!(
        solve_search_direction(&inst, &tol),
        Err(QcqpError::InvalidInstance(_))
    ));
    let mut inst = single_row_instance();
    inst.constraint_cuts[0].curvature = dmatrix![1.0, 0.0; 0.0, -1.0];
    assert!(matches!(
        solve_search_direction(&inst, &tol),
        Err(QcqpError::InvalidInstance(_))
    ));
    let mut inst = single_row_instance();
    inst.objective_cuts.clear();
    assert!(matches!(
        solve_search_direction(&inst, &tol),
        Err(QcqpError::InvalidInstance(_))
    ));
    let mut inst = single_row_instance();
    inst.objective_cuts[0].error = -0.1;
    assert!(matches!(
        solve_search_direction(&inst, &tol),
        Err(QcqpError::InvalidInstance(_))
    ));
}

/// At a boundary point whose constraint cut is `|d|² ≤ 0`, the only
/// feasible direction is zero.
#[test]
fn degenerate_cut_forces_zero_direction() {
    let inst = QcqpInstance {
        w_bar: eye(2) * 2.0,
        objective_cuts: vec![Cut::new(dvector![0.0, 1.0], 0.0, eye(2) * 1e-8)],
        objective_aggregate: None,
        constraint_cuts: vec![Cut::new(dvector![0.0, 0.0], 0.0, eye(2) * 2.0)],
        constraint_aggregate: None,
        cons: 0.0,
    };
    let r = brute_force_reference(&inst).unwrap();
    assert_eq!(r.d, dvector![0.0, 0.0]);
    assert_eq!(r.v_epigraph, 0.0);
}

#[test]
fn matches_reference_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tol = QcqpTolerances::default();
    for case in 0..150 {
        let inst = random_instance(&mut rng);
        let sol = solve_search_direction(&inst, &tol).unwrap_or_else(|e| panic!("case {case}: {e}"));
        let r = brute_force_reference(&inst).unwrap_or_else(|e| panic!("case {case}: {e}"));
        assert!((&sol.d - &r.d).amax() <= 1e-6, "case {case}: {} vs {}", sol.d, r.d);
        assert!((sol.v_hat - r.v_hat).abs() <= 1e-6, "case {case}");
        assert!(sol.gap_ok(&tol), "case {case}: gap {}", sol.gap);
        assert!(sol.v_hat <= 1e-12);
        assert!((sol.v_hat - sol.v_epigraph).abs() <= 1e-8 * sol.v_hat.abs().max(1.0));
        assert!(sol.infeasibility <= 1e-8);
        let d = direction_from_multipliers(&inst, &sol.multipliers).unwrap();
        assert!((d - &sol.d).amax() <= 1e-6);
    }
}

#[test]
fn adding_a_cut_never_decreases_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tol = QcqpTolerances::default();
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let base = solve_search_direction(&inst, &tol).unwrap();
        let n = inst.dim();
        let mut more = inst.clone();
        if rng.gen_bool(0.5) {
            more.objective_cuts.push(cut(&mut rng, n));
        } else {
            more.constraint_cuts.push(cut(&mut rng, n));
        }
        let sol = solve_search_direction(&more, &tol).unwrap();
        assert!(sol.primal >= base.primal - 1e-8 * base.primal.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn solutions_are_certified(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let tol = QcqpTolerances::default();
        let sol = solve_search_direction(&inst, &tol).unwrap();
        prop_assert!(sol.gap >= -1e-10);
        prop_assert!(sol.gap_ok(&tol));
        prop_assert!(sol.v_hat <= 1e-12);
        let m = &sol.multipliers;
        let lsum: f64 = m.lambda.iter().sum::<f64>() + m.lambda_p;
        prop_assert!((lsum - 1.0).abs() < 1e-9);
        prop_assert!(m.lambda.iter().chain(&m.mu).chain([&m.lambda_p, &m.mu_p]).all(|v| *v >= 0.0));
        // complementarity on every row
        for (row, w) in inst.rows().iter().zip(inst.flatten(m)) {
            prop_assert!(w * row.value(&sol.d, sol.v_epigraph).abs() <= 1e-8);
        }
    }
}
