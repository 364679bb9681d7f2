//! Active-set enumeration for tiny instances, used as an independent check
//! of the barrier solver.

use nalgebra::{DMatrix, DVector};

use super::{certify, QcqpError, QcqpInstance, Row, SubproblemSolution};
use crate::linalg::solve_spd;

const NEWTON_STEPS: usize = 60;
const KKT_TOL: f64 = 1e-11;
const SCREEN_TOL: f64 = 1e-9;

/// Solves the subproblem by enumerating active sets of size at most `n + 1`
/// and solving each equality-constrained KKT system with damped Newton
/// iterations. Intended for `n ≤ 4` and at most six rows.
///
/// Unlike [`super::solve_search_direction`], instances with `F(x_k) = 0`
/// are accepted; if some constraint cut can only be satisfied at a single
/// point, that point is returned.
pub fn brute_force_reference(inst: &QcqpInstance) -> Result<SubproblemSolution, QcqpError> {
    inst.check_structure()?;
    let rows = inst.rows();
    let nobj = inst.num_objective_rows();
    if let Some(sol) = singleton_feasible_set(inst, &rows, nobj)? {
        return Ok(sol);
    }
    let n = inst.dim();
    let m = rows.len();
    let mut best: Option<SubproblemSolution> = None;
    for mask in 1u32..(1u32 << m) {
        let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n + 1 || !set.iter().any(|&i| i < nobj) {
            continue;
        }
        for start in starts(inst, &rows, &set, nobj) {
            let Some((d, lambda)) = newton(inst, &rows, &set, nobj, start) else {
                continue;
            };
            let mut flat = vec![0.0; m];
            for (c, &i) in set.iter().enumerate() {
                flat[i] = lambda[c].max(0.0);
            }
            let sol = certify(inst, inst.unflatten(&flat), d, 0)?;
            if sol.infeasibility > SCREEN_TOL {
                continue;
            }
            if best.as_ref().is_none_or(|b| sol.primal < b.primal) {
                best = Some(sol);
            }
            break;
        }
    }
    best.ok_or(QcqpError::ReferenceFailed)
}

/// A constraint cut whose minimum over `d` is (numerically) zero admits a
/// single feasible point, where no multipliers exist.
fn singleton_feasible_set(
    inst: &QcqpInstance,
    rows: &[Row<'_>],
    nobj: usize,
) -> Result<Option<SubproblemSolution>, QcqpError> {
    for row in &rows[nobj..] {
        let d = -solve_spd(row.q, row.g)?;
        if row.model(&d) < -SCREEN_TOL {
            continue;
        }
        if inst.infeasibility(&d) > SCREEN_TOL {
            continue;
        }
        let obj: Vec<f64> = rows[..nobj].iter().map(|r| r.model(&d)).collect();
        let top = (0..nobj).max_by(|a, b| obj[*a].total_cmp(&obj[*b])).expect("objective rows exist");
        let mut flat = vec![0.0; rows.len()];
        flat[top] = 1.0;
        let mult = inst.unflatten(&flat);
        let mut sol = certify(inst, mult, d, 0)?;
        sol.v_hat = sol.v_epigraph;
        return Ok(Some(sol));
    }
    Ok(None)
}

struct Start {
    d: DVector<f64>,
    lambda: Vec<f64>,
}

fn starts(inst: &QcqpInstance, rows: &[Row<'_>], set: &[usize], nobj: usize) -> Vec<Start> {
    let n = inst.dim();
    let k_obj = set.iter().filter(|&&i| i < nobj).count() as f64;
    let lambda: Vec<f64> = set
        .iter()
        .map(|&i| if i < nobj { 1.0 / k_obj } else { 0.5 })
        .collect();
    let mut ds = vec![DVector::zeros(n)];
    for &i in set {
        if let Ok(d) = solve_spd(&(inst.w_bar.clone() + rows[i].q), rows[i].g) {
            ds.push(-d);
        }
    }
    for j in 0..4 {
        ds.push(DVector::from_fn(n, |i, _| (1.7 * (i + 1) as f64 + 2.3 * j as f64).sin()));
    }
    ds.into_iter()
        .map(|d| Start {
            d,
            lambda: lambda.clone(),
        })
        .collect()
}

/// Residual of the KKT equations restricted to the active set `set`.
fn residual(
    inst: &QcqpInstance,
    rows: &[Row<'_>],
    set: &[usize],
    nobj: usize,
    d: &DVector<f64>,
    v: f64,
    lambda: &[f64],
) -> DVector<f64> {
    let n = inst.dim();
    let k = set.len();
    let mut r = DVector::zeros(n + 1 + k);
    let mut stat = &inst.w_bar * d;
    let mut lsum = 0.0;
    for (c, &i) in set.iter().enumerate() {
        stat += rows[i].grad_d(d) * lambda[c];
        if i < nobj {
            lsum += lambda[c];
        }
        r[n + 1 + c] = rows[i].value(d, v);
    }
    r.rows_mut(0, n).copy_from(&stat);
    r[n] = 1.0 - lsum;
    r
}

fn newton(
    inst: &QcqpInstance,
    rows: &[Row<'_>],
    set: &[usize],
    nobj: usize,
    start: Start,
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = inst.dim();
    let k = set.len();
    let mut d = start.d;
    let mut lambda = start.lambda;
    let mut v = set
        .iter()
        .filter(|&&i| i < nobj)
        .map(|&i| rows[i].model(&d))
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 + inst.w_bar.amax() + rows.iter().map(|r| r.g.amax() + r.b.abs()).fold(0.0, f64::max);
    let mut res = residual(inst, rows, set, nobj, &d, v, &lambda);
    for _ in 0..NEWTON_STEPS {
        if res.amax() <= KKT_TOL * scale {
            break;
        }
        let mut jac = DMatrix::zeros(n + 1 + k, n + 1 + k);
        let mut hess = inst.w_bar.clone();
        for (c, &i) in set.iter().enumerate() {
            hess += rows[i].q * lambda[c];
            let gi = rows[i].grad_d(&d);
            jac.view_mut((0, n + 1 + c), (n, 1)).copy_from(&gi);
            jac.view_mut((n + 1 + c, 0), (1, n)).copy_from(&gi.transpose());
            if i < nobj {
                jac[(n, n + 1 + c)] = -1.0;
                jac[(n + 1 + c, n)] = -1.0;
            }
        }
        jac.view_mut((0, 0), (n, n)).copy_from(&hess);
        let step = jac.lu().solve(&(-&res))?;
        if step.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let norm0 = res.norm();
        let mut alpha = 1.0;
        loop {
            let dn = &d + step.rows(0, n) * alpha;
            let vn = v + step[n] * alpha;
            let ln: Vec<f64> = (0..k).map(|c| lambda[c] + alpha * step[n + 1 + c]).collect();
            let rn = residual(inst, rows, set, nobj, &dn, vn, &ln);
            if rn.norm() < (1.0 - 1e-4 * alpha) * norm0 || alpha < 1e-6 {
                d = dn;
                v = vn;
                lambda = ln;
                res = rn;
                break;
            }
            alpha *= 0.5;
        }
    }
    if res.amax() > KKT_TOL * scale * 10.0 {
        return None;
    }
    if lambda.iter().any(|l| *l < -SCREEN_TOL) {
        return None;
    }
    // inactive objective rows must lie below the epigraph value
    let slack_ok = (0..nobj)
        .filter(|i| !set.contains(i))
        .all(|i| rows[i].value(&d, v) <= SCREEN_TOL * scale);
    if !slack_ok {
        return None;
    }
    Some((d, lambda))
}
