//! Primal log-barrier method on `z = (d, v)`.

use nalgebra::{DMatrix, DVector};

use super::{Multipliers, QcqpError, QcqpInstance, QcqpTolerances, Row};
use crate::linalg::{quad_form, solve_spd};

const FRACTION_TO_BOUNDARY: f64 = 0.995;
const ARMIJO: f64 = 1e-4;
const MU_START: f64 = 1.0;
const MU_MIN: f64 = 1e-300;
/// Fraction of the gap tolerance the barrier gap has to reach.
const GAP_SAFETY: f64 = 1e-2;
const MU_FACTOR: f64 = 30.0;
const INNER_TOL: f64 = 1e-4;
const FINAL_TOL: f64 = 1e-12;
/// A row counts as active when its multiplier estimate exceeds one of these
/// multiples of its slack; tiny multipliers of far cuts need the smaller one.
const ACTIVE_RATIOS: [f64; 2] = [1.0, 1e-4];

pub(crate) struct IpmOutput {
    pub d: DVector<f64>,
    /// Multiplier estimates in order of preference: for each activity
    /// threshold a Newton refinement of the active-set optimality system, a
    /// least-squares fit of the stationarity equation on the
    /// active rows and the barrier estimates restricted to them, then the
    /// barrier estimates on every row.
    pub candidates: Vec<Multipliers>,
    pub iterations: usize,
}

struct Barrier<'a> {
    inst: &'a QcqpInstance,
    rows: Vec<Row<'a>>,
    n: usize,
}

impl Barrier<'_> {
    fn slacks(&self, d: &DVector<f64>, v: f64) -> Option<Vec<f64>> {
        let s: Vec<f64> = self.rows.iter().map(|r| -r.value(d, v)).collect();
        if s.iter().all(|x| *x > 0.0 && x.is_finite()) {
            Some(s)
        } else {
            None
        }
    }

    /// `t (v + ½dᵀW̄d) − Σ log(−q_i)`, infinite outside the interior.
    fn phi(&self, t: f64, d: &DVector<f64>, v: f64) -> f64 {
        match self.slacks(d, v) {
            Some(s) => t * (v + 0.5 * quad_form(&self.inst.w_bar, d)) - s.iter().map(|x| x.ln()).sum::<f64>(),
            None => f64::INFINITY,
        }
    }

    fn newton(&self, t: f64, d: &DVector<f64>, s: &[f64]) -> Result<(DVector<f64>, f64), QcqpError> {
        let n = self.n;
        let mut h = DMatrix::zeros(n + 1, n + 1);
        let mut grad = DVector::zeros(n + 1);
        h.view_mut((0, 0), (n, n)).copy_from(&(&self.inst.w_bar * t));
        grad.rows_mut(0, n).copy_from(&(&self.inst.w_bar * d * t));
        grad[n] = t;
        for (row, &si) in self.rows.iter().zip(s) {
            let mut gi = DVector::zeros(n + 1);
            gi.rows_mut(0, n).copy_from(&row.grad_d(d));
            gi[n] = if row.epigraph { -1.0 } else { 0.0 };
            grad += &gi / si;
            let mut block = h.view_mut((0, 0), (n, n));
            block += row.q / si;
            h += &gi * gi.transpose() / (si * si);
        }
        let step = -solve_regularized(h, &grad)?;
        let decrement = -grad.dot(&step);
        Ok((step, decrement))
    }

    /// Largest step in (0, 1] keeping every row strictly inside, scaled by
    /// the fraction-to-boundary factor.
    fn max_step(&self, d: &DVector<f64>, dd: &DVector<f64>, dv: f64, s: &[f64]) -> f64 {
        let mut alpha = 1.0f64;
        for (row, &si) in self.rows.iter().zip(s) {
            let e = if row.epigraph { dv } else { 0.0 };
            let slope = row.grad_d(d).dot(dd) - e;
            let curv = quad_form(row.q, dd);
            // q(α) = −s + α slope + ½ α² curv
            let disc = slope * slope + 2.0 * curv * si;
            let denom = slope + disc.max(0.0).sqrt();
            if denom > 0.0 {
                alpha = alpha.min(FRACTION_TO_BOUNDARY * 2.0 * si / denom);
            }
        }
        alpha
    }
}

/// Solves `H x = b`, adding a growing multiple of the largest diagonal
/// entry when `H` is numerically singular.
fn solve_regularized(mut h: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, QcqpError> {
    if let Ok(x) = solve_spd(&h, b) {
        return Ok(x);
    }
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * scale;
    let mut added = 0.0;
    for _ in 0..12 {
        for i in 0..h.nrows() {
            h[(i, i)] += shift - added;
        }
        added = shift;
        if let Ok(x) = solve_spd(&h, b) {
            return Ok(x);
        }
        shift *= 100.0;
    }
    Err(QcqpError::Linalg(crate::linalg::LinalgError::Singular))
}

pub(crate) fn solve(inst: &QcqpInstance, tol: &QcqpTolerances) -> Result<IpmOutput, QcqpError> {
    let n = inst.dim();
    let barrier = Barrier {
        inst,
        rows: inst.rows(),
        n,
    };
    let mut d = DVector::zeros(n);
    let mut v = inst
        .rows()
        .iter()
        .filter(|r| r.epigraph)
        .map(|r| r.b)
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    // start the barrier at the magnitude of the unconstrained cut optima
    let magnitude = barrier
        .rows
        .iter()
        .filter(|r| r.epigraph)
        .map(|r| {
            let step = solve_spd(&inst.w_bar, r.g).map_or(0.0, |x| 0.5 * r.g.dot(&x));
            r.b.abs() + step
        })
        .fold(1.0, f64::max);
    let num_rows = barrier.rows.len() as f64;
    let mut mu = MU_START * magnitude;
    let mut last = false;
    let mut iterations = 0;
    'outer: loop {
        let t = 1.0 / mu;
        let centering_tol = if last { FINAL_TOL } else { INNER_TOL };
        loop {
            if iterations >= tol.max_iter {
                break 'outer;
            }
            let s = barrier.slacks(&d, v).expect("iterate stays interior");
            let (step, decrement) = barrier.newton(t, &d, &s)?;
            if !(decrement > centering_tol) {
                break;
            }
            iterations += 1;
            let dd = step.rows(0, n).into_owned();
            let dv = step[n];
            let mut alpha = barrier.max_step(&d, &dd, dv, &s);
            let phi0 = barrier.phi(t, &d, v);
            let slack = 1e-14 * phi0.abs().max(1.0);
            let mut accepted = false;
            while alpha > 1e-14 {
                let dn = &d + &dd * alpha;
                let vn = v + dv * alpha;
                let phi1 = barrier.phi(t, &dn, vn);
                if phi1 <= phi0 - ARMIJO * alpha * decrement + slack {
                    d = dn;
                    v = vn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no progress possible at this barrier level
                break;
            }
        }
        if last {
            break;
        }
        // the central path point at μ has duality gap (#rows)·μ
        let primal = v + 0.5 * quad_form(&inst.w_bar, &d);
        if num_rows * mu <= GAP_SAFETY * tol.gap_tol * primal.abs().max(1.0) || mu <= MU_MIN {
            last = true;
        } else {
            mu /= MU_FACTOR;
        }
    }

    let s = barrier.slacks(&d, v).expect("iterate stays interior");
    let nobj = inst.num_objective_rows();
    let mut dense: Vec<f64> = s.iter().map(|si| mu / si).collect();
    let mut candidates = Vec::new();
    for ratio in ACTIVE_RATIOS {
        let raw = active_part(&dense, &s, ratio, nobj);
        if let Some(r) = refine(&barrier, &d, v, &raw, nobj) {
            candidates.push(inst.unflatten(&r));
        }
        if let Some(p) = polish(&barrier, &d, &raw, nobj) {
            candidates.push(inst.unflatten(&p));
        }
        candidates.push(inst.unflatten(&raw));
    }
    normalize(&mut dense, nobj);
    candidates.push(inst.unflatten(&dense));
    Ok(IpmOutput {
        d,
        candidates,
        iterations,
    })
}

/// Multiplier estimates of the rows whose estimate exceeds `ratio` times
/// their slack, normalized over the objective rows.
fn active_part(dense: &[f64], s: &[f64], ratio: f64, nobj: usize) -> Vec<f64> {
    let mut raw: Vec<f64> = dense
        .iter()
        .zip(s)
        .map(|(l, si)| if *l > ratio * si { *l } else { 0.0 })
        .collect();
    if raw[..nobj].iter().all(|l| *l == 0.0) {
        // keep the tightest objective row
        let i = (0..nobj).min_by(|a, b| s[*a].total_cmp(&s[*b])).expect("objective rows exist");
        raw[i] = 1.0;
    }
    normalize(&mut raw, nobj);
    raw
}

fn normalize(lambda: &mut [f64], nobj: usize) {
    let sum: f64 = lambda[..nobj].iter().sum();
    if sum > 0.0 {
        for l in &mut lambda[..nobj] {
            *l /= sum;
        }
    }
}

/// Newton iterations on the optimality system of the active rows treated
/// as equalities, `W̄d + Σλ_i∇_d q_i(d) = 0`, `q_i(d, v) = 0`, `Σ_obj λ = 1`.
/// Returns the multipliers when the iteration converges with `λ ≥ 0` and
/// every other row feasible; the active set is corrected one row at a time.
fn refine(b: &Barrier<'_>, d: &DVector<f64>, v: f64, raw: &[f64], nobj: usize) -> Option<Vec<f64>> {
    let mut active: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] > 0.0).collect();
    let mut start: Vec<f64> = raw.to_vec();
    for _ in 0..2 * raw.len() {
        if active.is_empty() {
            return None;
        }
        match refine_on(b, d, v, &start, nobj, &active)? {
            Refined::Done(out) => return Some(out),
            Refined::Drop(pos) => {
                active.remove(pos);
            }
            Refined::Add(row, lambda) => {
                start = lambda;
                active.push(row);
                active.sort_unstable();
            }
        }
    }
    None
}

enum Refined {
    Done(Vec<f64>),
    /// Position in the active set of the most negative multiplier.
    Drop(usize),
    /// Most violated inactive row and the multipliers found so far.
    Add(usize, Vec<f64>),
}

fn refine_on(
    b: &Barrier<'_>,
    d: &DVector<f64>,
    v: f64,
    raw: &[f64],
    nobj: usize,
    active: &[usize],
) -> Option<Refined> {
    const MAX_NEWTON: usize = 20;
    let n = b.n;
    let k = active.len();
    let dim = n + 1 + k;
    let mut d = d.clone();
    let mut v = v;
    let mut lambda: Vec<f64> = active.iter().map(|&i| raw[i]).collect();
    let residual = |d: &DVector<f64>, v: f64, lambda: &[f64]| {
        let mut r = DVector::zeros(dim + 1);
        let mut stat = &b.inst.w_bar * d;
        for (&i, &l) in active.iter().zip(lambda) {
            stat += b.rows[i].grad_d(d) * l;
        }
        r.rows_mut(0, n).copy_from(&stat);
        for (c, &i) in active.iter().enumerate() {
            r[n + c] = b.rows[i].value(d, v);
        }
        r[n + k] = active.iter().zip(lambda).filter(|(i, _)| **i < nobj).map(|(_, l)| l).sum::<f64>() - 1.0;
        r.rows(0, dim).into_owned()
    };
    let scale = b.inst.w_bar.amax().max(b.rows.iter().map(|r| r.g.amax()).fold(1.0, f64::max));
    for _ in 0..MAX_NEWTON {
        let r = residual(&d, v, &lambda);
        if r.amax() <= 1e-14 * scale * (1.0 + d.amax()) {
            break;
        }
        // unknowns (d, v, λ) in that order; equations (stationarity, rows, Σλ)
        let mut jac = DMatrix::zeros(dim, dim);
        let mut m = b.inst.w_bar.clone();
        for (&i, &l) in active.iter().zip(&lambda) {
            m += b.rows[i].q * l;
        }
        jac.view_mut((0, 0), (n, n)).copy_from(&m);
        for (c, &i) in active.iter().enumerate() {
            let gi = b.rows[i].grad_d(&d);
            jac.view_mut((0, n + 1 + c), (n, 1)).copy_from(&gi);
            jac.view_mut((n + c, 0), (1, n)).copy_from(&gi.transpose());
            if b.rows[i].epigraph {
                jac[(n + c, n)] = -1.0;
                jac[(n + k, n + 1 + c)] = 1.0;
            }
        }
        // minimum-norm step: degenerate active sets make the system singular
        let step = jac.svd(true, true).solve(&-r, 1e-15 * scale).ok()?;
        if step.iter().any(|x| !x.is_finite()) {
            return None;
        }
        d += step.rows(0, n);
        v += step[n];
        for (c, l) in lambda.iter_mut().enumerate() {
            *l += step[n + 1 + c];
        }
    }
    let r = residual(&d, v, &lambda);
    if r.amax() > 1e-10 * scale * (1.0 + d.amax()) {
        return None;
    }
    let worst = (0..k).min_by(|a, b| lambda[*a].total_cmp(&lambda[*b]))?;
    if lambda[worst] < 0.0 {
        return Some(Refined::Drop(worst));
    }
    let mut out = vec![0.0; raw.len()];
    for (&i, &l) in active.iter().zip(&lambda) {
        out[i] = l;
    }
    let violated = (0..b.rows.len())
        .filter(|i| !active.contains(i))
        .map(|i| (i, b.rows[i].value(&d, v)))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((i, value)) = violated {
        if value > 1e-12 * scale * (1.0 + d.amax()) {
            return Some(Refined::Add(i, out));
        }
    }
    Some(Refined::Done(out))
}

/// Refits the multipliers of the active rows to `W̄d + Σλ_i ∇_d q_i(d) = 0`
/// with `Σ_obj λ = 1`, clipping negative values.
fn polish(b: &Barrier<'_>, d: &DVector<f64>, raw: &[f64], nobj: usize) -> Option<Vec<f64>> {
    let n = b.n;
    let active: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] > 0.0).collect();
    let k = active.len();
    let scale = b
        .inst
        .w_bar
        .amax()
        .max(b.rows.iter().map(|r| r.grad_d(d).amax()).fold(1.0, f64::max));
    let mut a = DMatrix::zeros(n + 1, k);
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&-(&b.inst.w_bar * d));
    for (c, &i) in active.iter().enumerate() {
        a.view_mut((0, c), (n, 1)).copy_from(&b.rows[i].grad_d(d));
        if i < nobj {
            a[(n, c)] = scale;
        }
    }
    rhs[n] = scale;
    let svd = a.svd(true, true);
    let sol = svd.solve(&rhs, 1e-13 * scale).ok()?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = vec![0.0; raw.len()];
    for (c, &i) in active.iter().enumerate() {
        out[i] = sol[c].max(0.0);
    }
    if out[..nobj].iter().all(|l| *l == 0.0) {
        return None;
    }
    normalize(&mut out, nobj);
    Some(out)
}
