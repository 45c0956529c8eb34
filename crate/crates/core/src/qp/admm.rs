use std::collections::HashSet;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Duals, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::error::{Error, Result};

const CHECK_EVERY: usize = 5;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const NORM_CLIP: (f64, f64) = (1e-4, 1e4);
const POLISH_REG: f64 = 1e-9;
const POLISH_REFINE: usize = 4;
const POLISH_MAX_ROUNDS: usize = 30;
const INFEAS_TOL: f64 = 1e-5;

/// Equilibrated problem in the stacked form `l <= A x <= u` with
/// `A = [diag(a_box); G]`, `x = D x_bar`, `y = E y_bar / c`. The box rows are
/// kept diagonal so every product with `A` costs `O(d^2 + p d)`.
struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a_box: DVector<f64>,
    g: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

impl Scaled {
    fn n(&self) -> usize {
        self.p.nrows()
    }

    fn ax(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut out = DVector::zeros(n + self.g.nrows());
        out.rows_mut(0, n).copy_from(&self.a_box.component_mul(x));
        out.rows_mut(n, self.g.nrows()).copy_from(&(&self.g * x));
        out
    }

    fn aty(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut out = self.a_box.component_mul(&y.rows(0, n));
        if self.g.nrows() > 0 {
            out += self.g.tr_mul(&y.rows(n, self.g.nrows()));
        }
        out
    }

    /// Row `i` of `A` as a dense vector.
    fn row(&self, i: usize) -> DVector<f64> {
        let n = self.n();
        if i < n {
            let mut v = DVector::zeros(n);
            v[i] = self.a_box[i];
            v
        } else {
            self.g.row(i - n).transpose()
        }
    }
}

fn clip_norm(v: f64) -> f64 {
    if v < NORM_CLIP.0 {
        1.0
    } else {
        v.min(NORM_CLIP.1)
    }
}

fn col_amax(m: &DMatrix<f64>, j: usize) -> f64 {
    let r = m.nrows();
    m.as_slice()[j * r..(j + 1) * r]
        .iter()
        .fold(0.0, |acc, v| acc.max(v.abs()))
}

fn equilibrate(qp: &QpProblem, iters: usize) -> Scaled {
    let d = qp.dim();
    let p_rows = qp.num_ineq();
    let mut l = DVector::from_element(d + p_rows, f64::NEG_INFINITY);
    let mut u = DVector::from_element(d + p_rows, f64::INFINITY);
    l.rows_mut(0, d).copy_from(&qp.lb);
    u.rows_mut(0, d).copy_from(&qp.ub);
    u.rows_mut(d, p_rows).copy_from(&qp.h_ineq);

    let mut p = qp.hessian.clone();
    let mut q = qp.linear.clone();
    let mut a_box: DVector<f64> = DVector::from_element(d, 1.0);
    let mut g = qp.g_ineq.clone();
    let mut dd = DVector::from_element(d, 1.0);
    let mut ee = DVector::from_element(d + p_rows, 1.0);
    let mut c = 1.0;

    // p holds D H D; the cost factor c is applied once at the end
    let mut p_col: Vec<f64> = (0..d).map(|j| col_amax(&p, j)).collect();
    for _ in 0..iters {
        let delta: DVector<f64> = DVector::from_fn(d, |j, _| {
            let a_col = a_box[j].abs().max(col_amax(&g, j));
            1.0 / clip_norm((c * p_col[j]).max(a_col)).sqrt()
        });
        let eps: DVector<f64> = DVector::from_fn(d + p_rows, |i, _| {
            let norm = if i < d { a_box[i].abs() } else { g.row(i - d).amax() };
            1.0 / clip_norm(norm).sqrt()
        });
        let eps_g = eps.rows(d, p_rows);
        let (ds, es) = (delta.as_slice(), eps_g.as_slice());
        for j in 0..d {
            let dj = ds[j];
            p_col[j] = p.as_mut_slice()[j * d..(j + 1) * d]
                .iter_mut()
                .zip(ds)
                .fold(0.0, |acc, (v, di)| {
                    *v *= di * dj;
                    acc.max(v.abs())
                });
            g.as_mut_slice()[j * p_rows..(j + 1) * p_rows]
                .iter_mut()
                .zip(es)
                .for_each(|(v, ei)| *v *= ei * dj);
            a_box[j] *= eps[j] * dj;
        }
        q.component_mul_assign(&delta);
        dd.component_mul_assign(&delta);
        ee.component_mul_assign(&eps);

        let mean_col = c * p_col.iter().sum::<f64>() / d.max(1) as f64;
        let gamma = 1.0 / clip_norm(mean_col.max(c * q.amax()));
        c *= gamma;
    }
    p *= c;
    q *= c;
    l.component_mul_assign(&ee);
    u.component_mul_assign(&ee);
    Scaled {
        p,
        q,
        a_box,
        g,
        l,
        u,
        d: dd,
        e: ee,
        c,
    }
}

/// Solves from a cold start.
pub fn solve(qp: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    run(qp, settings, None)
}

/// Solves starting from a previous primal-dual solution of a problem with
/// the same dimensions.
pub fn warm_start(qp: &QpProblem, previous: &QpSolution, settings: &QpSettings) -> Result<QpSolution> {
    if previous.z.len() != qp.dim() || previous.duals.ineq.len() != qp.num_ineq() {
        return Err(Error::dim("warm start", qp.dim(), previous.z.len()));
    }
    run(qp, settings, Some(previous))
}

fn rho_vector(s: &Scaled, rho: f64) -> DVector<f64> {
    DVector::from_fn(s.l.len(), |i, _| {
        let (lo, hi) = (s.l[i], s.u[i]);
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            RHO_MIN
        } else if lo == hi {
            RHO_EQ_FACTOR * rho
        } else {
            rho
        }
    })
}

fn factor(s: &Scaled, sigma: f64, rho: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = s.n();
    let mut m = s.p.clone();
    for i in 0..n {
        m[(i, i)] += sigma + rho[i] * s.a_box[i] * s.a_box[i];
    }
    if s.g.nrows() > 0 {
        let rg = DMatrix::from_fn(s.g.nrows(), n, |i, j| rho[n + i] * s.g[(i, j)]);
        m += s.g.tr_mul(&rg);
    }
    Cholesky::new(m).ok_or_else(|| Error::InvalidArgument("QP Hessian is not positive semidefinite".into()))
}

/// Extracts `(x, Duals)` in original units from scaled iterates.
fn unscale(qp: &QpProblem, s: &Scaled, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, Duals) {
    let d = qp.dim();
    let xo = x.component_mul(&s.d);
    let yo = y.component_mul(&s.e) / s.c;
    let mut duals = Duals::zeros(d, qp.num_ineq());
    for i in 0..d {
        duals.lower[i] = (-yo[i]).max(0.0);
        duals.upper[i] = yo[i].max(0.0);
    }
    for i in 0..qp.num_ineq() {
        duals.ineq[i] = yo[d + i].max(0.0);
    }
    (xo, duals)
}

fn finish(
    qp: &QpProblem,
    mut z: DVector<f64>,
    duals: Duals,
    status: QpStatus,
    iterations: usize,
    start: Instant,
    tol: f64,
) -> QpSolution {
    // iterates may sit marginally outside the box; the box is exact by contract
    for i in 0..qp.dim() {
        z[i] = z[i].clamp(qp.lb[i], qp.ub[i]);
    }
    let kkt_residual = qp.kkt_residual(&z, &duals);
    let status = match status {
        QpStatus::Optimal if kkt_residual > tol => QpStatus::MaxIter,
        other => other,
    };
    QpSolution {
        objective: qp.objective(&z),
        z,
        duals,
        status,
        kkt_residual,
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
    }
}

fn run(qp: &QpProblem, st: &QpSettings, previous: Option<&QpSolution>) -> Result<QpSolution> {
    let start = Instant::now();
    qp.validate()?;
    st.validate()?;
    let s = equilibrate(qp, st.scaling_iters);
    let n = qp.dim();
    let mc = s.l.len();

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(mc);
    if let Some(prev) = previous {
        x = prev.z.component_div(&s.d);
        let mut yo = DVector::zeros(mc);
        for i in 0..n {
            yo[i] = prev.duals.upper[i] - prev.duals.lower[i];
        }
        yo.rows_mut(n, qp.num_ineq()).copy_from(&prev.duals.ineq);
        y = yo.component_div(&s.e) * s.c;
    }
    let mut z = project(&s.ax(&x), &s.l, &s.u);

    let mut rho = st.rho;
    let mut rho_vec = rho_vector(&s, rho);
    let mut chol = factor(&s, st.sigma, &rho_vec)?;
    let mut polished_sets: HashSet<Vec<i8>> = HashSet::new();
    let mut best: Option<(f64, DVector<f64>, Duals)> = None;
    let mut prim_history: Vec<(usize, f64)> = Vec::new();
    let mut y_prev = y.clone();
    let loose = st.tol.sqrt().clamp(1e-3, 1e-2);

    for iter in 0..=st.max_iter {
        if iter % CHECK_EVERY == 0 || iter == st.max_iter {
            let ax = s.ax(&x);
            let prim_s = &ax - &z;
            let prim = prim_s.component_div(&s.e).amax();
            let aty = s.aty(&y);
            let px = &s.p * &x;
            let dual_s = &px + &s.q + &aty;
            let dual = dual_s.component_div(&s.d).amax() / s.c;

            if prim <= st.tol && dual <= st.tol {
                let (xo, duals) = unscale(qp, &s, &x, &y);
                let sol = finish(qp, xo, duals, QpStatus::Optimal, iter, start, st.tol);
                if sol.status == QpStatus::Optimal {
                    // snap onto the active set if that is at least as accurate
                    if st.polish {
                        if let Some((xp, yp)) = polish(&s, active_signature(&s, &z, &y)) {
                            let (xo, duals) = unscale(qp, &s, &xp, &yp);
                            let polished = finish(qp, xo, duals, QpStatus::Optimal, iter, start, st.tol);
                            if polished.status == QpStatus::Optimal && polished.kkt_residual <= sol.kkt_residual {
                                return Ok(polished);
                            }
                        }
                    }
                    return Ok(sol);
                }
                keep_best(&mut best, sol.kkt_residual, sol.z, sol.duals);
            }
            if st.polish && prim <= loose && dual <= loose {
                let signature = active_signature(&s, &z, &y);
                if polished_sets.insert(signature.clone()) {
                    if let Some((xp, yp)) = polish(&s, signature) {
                        let (xo, duals) = unscale(qp, &s, &xp, &yp);
                        let sol = finish(qp, xo, duals, QpStatus::Optimal, iter, start, st.tol);
                        if sol.status == QpStatus::Optimal {
                            return Ok(sol);
                        }
                        keep_best(&mut best, sol.kkt_residual, sol.z, sol.duals);
                    }
                }
            }
            if iter == st.max_iter {
                break;
            }

            prim_history.push((iter, prim));
            if prim > st.tol && iter >= st.stall_window {
                let then = prim_history
                    .iter()
                    .rev()
                    .find(|(k, _)| *k + st.stall_window <= iter)
                    .map(|(_, p)| *p);
                if let Some(then) = then {
                    if prim > 0.99 * then && infeasibility_certificate(&s, &(&y - &y_prev)) {
                        log::debug!("QP primal residual stalled at {prim:.3e}; certificate found");
                        let (xo, duals) = unscale(qp, &s, &x, &y);
                        return Ok(finish(qp, xo, duals, QpStatus::Infeasible, iter, start, st.tol));
                    }
                }
            }

            if st.adaptive_rho && iter > 0 && iter % (5 * CHECK_EVERY) == 0 {
                let prim_n = prim_s.amax() / ax.amax().max(z.amax()).max(1e-12);
                let dual_n = dual_s.amax() / px.amax().max(aty.amax()).max(s.q.amax()).max(1e-12);
                let ratio = (prim_n / dual_n.max(1e-30)).sqrt();
                let new_rho = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    rho = new_rho;
                    rho_vec = rho_vector(&s, rho);
                    chol = factor(&s, st.sigma, &rho_vec)?;
                }
            }
        }

        y_prev.copy_from(&y);
        let rz = rho_vec.component_mul(&z) - &y;
        let rhs = &x * st.sigma - &s.q + s.aty(&rz);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = s.ax(&x_tilde);
        x = &x_tilde * st.alpha + &x * (1.0 - st.alpha);
        let z_relaxed = &z_tilde * st.alpha + &z * (1.0 - st.alpha);
        let z_new = project(&(&z_relaxed + y.component_div(&rho_vec)), &s.l, &s.u);
        y += rho_vec.component_mul(&(&z_relaxed - &z_new));
        z = z_new;
    }

    match best {
        Some((_, zb, db)) => Ok(finish(qp, zb, db, QpStatus::MaxIter, st.max_iter, start, st.tol)),
        None => {
            let (xo, duals) = unscale(qp, &s, &x, &y);
            Ok(finish(qp, xo, duals, QpStatus::MaxIter, st.max_iter, start, st.tol))
        }
    }
}

fn keep_best(best: &mut Option<(f64, DVector<f64>, Duals)>, kkt: f64, z: DVector<f64>, duals: Duals) {
    if best.as_ref().is_none_or(|(b, _, _)| kkt < *b) {
        *best = Some((kkt, z, duals));
    }
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(l[i], u[i]))
}

/// Primal infeasibility certificate on the change of the dual iterate.
fn infeasibility_certificate(s: &Scaled, dy: &DVector<f64>) -> bool {
    let scale = dy.component_mul(&s.e).amax();
    if scale < 1e-12 {
        return false;
    }
    let aty = s.aty(dy).component_div(&s.d).amax();
    if aty > INFEAS_TOL * scale {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let v = dy[i];
        if v > 0.0 {
            if s.u[i].is_infinite() {
                if v * s.e[i] > INFEAS_TOL * scale {
                    return false;
                }
            } else {
                support += s.u[i] * v;
            }
        } else if v < 0.0 {
            if s.l[i].is_infinite() {
                if -v * s.e[i] > INFEAS_TOL * scale {
                    return false;
                }
            } else {
                support += s.l[i] * v;
            }
        }
    }
    support < -INFEAS_TOL * scale
}

/// Per-row guess: -1 lower active, +1 upper active, 2 equality, 0 inactive.
fn active_signature(s: &Scaled, z: &DVector<f64>, y: &DVector<f64>) -> Vec<i8> {
    (0..z.len())
        .map(|i| {
            if s.l[i] == s.u[i] {
                2
            } else if s.l[i].is_finite() && z[i] - s.l[i] < -y[i] {
                -1
            } else if s.u[i].is_finite() && s.u[i] - z[i] < y[i] {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Equality-constrained solve on a guessed active set, corrected by a few
/// primal-dual active-set rounds.
fn polish(s: &Scaled, mut active: Vec<i8>) -> Option<(DVector<f64>, DVector<f64>)> {
    let mc = s.l.len();
    let mut seen: HashSet<Vec<i8>> = HashSet::new();
    let tol = 1e-10 * (1.0 + s.q.amax());
    for _ in 0..POLISH_MAX_ROUNDS {
        if !seen.insert(active.clone()) {
            return None;
        }
        let (x, y) = solve_active(s, &active)?;
        let ax = s.ax(&x);
        let mut changed = false;
        for i in 0..mc {
            match active[i] {
                -1 if y[i] > tol => {
                    active[i] = 0;
                    changed = true;
                }
                1 if y[i] < -tol => {
                    active[i] = 0;
                    changed = true;
                }
                0 if ax[i] < s.l[i] - tol * (1.0 + s.l[i].abs()) => {
                    active[i] = -1;
                    changed = true;
                }
                0 if ax[i] > s.u[i] + tol * (1.0 + s.u[i].abs()) => {
                    active[i] = 1;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return Some((x, y));
        }
    }
    None
}

fn bound_for(s: &Scaled, active: &[i8], i: usize) -> f64 {
    if active[i] == -1 {
        s.l[i]
    } else {
        s.u[i]
    }
}

/// Solves the equality-constrained QP on `active`, returning `(x, y)` with
/// `y` zero on inactive rows.
fn solve_active(s: &Scaled, active: &[i8]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.n();
    if active[n..].iter().all(|a| *a == 0) {
        solve_box_active(s, active)
    } else {
        solve_kkt(s, active)
    }
}

/// Only box rows active: fix those variables and solve for the rest.
fn solve_box_active(s: &Scaled, active: &[i8]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.n();
    let mut x = DVector::zeros(n);
    let free: Vec<usize> = (0..n).filter(|&i| active[i] == 0).collect();
    for i in 0..n {
        if active[i] != 0 {
            x[i] = bound_for(s, active, i) / s.a_box[i];
        }
    }
    if !free.is_empty() {
        let pf = s.p.select_rows(&free).select_columns(&free);
        let px_fixed = &s.p * &x;
        let rhs = DVector::from_fn(free.len(), |k, _| -s.q[free[k]] - px_fixed[free[k]]);
        let sol = pf.cholesky()?.solve(&rhs);
        for (k, &i) in free.iter().enumerate() {
            x[i] = sol[k];
        }
    }
    // stationarity on the fixed rows gives their multipliers
    let grad = &s.p * &x + &s.q;
    let mut y = DVector::zeros(s.l.len());
    for i in 0..n {
        if active[i] != 0 {
            y[i] = -grad[i] / s.a_box[i];
        }
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((x, y))
}

fn solve_kkt(s: &Scaled, active: &[i8]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.n();
    let rows: Vec<usize> = (0..s.l.len()).filter(|&i| active[i] != 0).collect();
    let k = rows.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&s.p);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&s.q));
    for (r, &i) in rows.iter().enumerate() {
        let row = s.row(i);
        for j in 0..n {
            kkt[(n + r, j)] = row[j];
            kkt[(j, n + r)] = row[j];
        }
        rhs[n + r] = bound_for(s, active, i);
    }
    let mut reg = kkt.clone();
    for i in 0..n {
        reg[(i, i)] += POLISH_REG;
    }
    for i in n..n + k {
        reg[(i, i)] -= POLISH_REG;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..POLISH_REFINE {
        let resid = &rhs - &kkt * &sol;
        sol += lu.solve(&resid)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut y = DVector::zeros(s.l.len());
    for (r, &i) in rows.iter().enumerate() {
        y[i] = sol[n + r];
    }
    Some((sol.rows(0, n).into_owned(), y))
}
