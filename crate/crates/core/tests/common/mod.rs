//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls the solver or fitting code under
//! test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rokmpc::lifting::{CoefficientEstimate, FunctionLibrary, KalmanGsindyConfig, LibraryConfig};
use rokmpc::qp::QpProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn eig_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Random `A` rescaled to spectral radius `radius`, random `B`.
pub fn stable_system(rng: &mut ChaCha8Rng, n: usize, m: usize, radius: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = gaussian_matrix(rng, n, n);
    let rho = eig_radius(&a);
    (a * (radius / rho), gaussian_matrix(rng, n, m))
}

/// States `n x K` and inputs `m x (K-1)` of `x+ = A x + B u` under uniform
/// random inputs in `[-1, 1]`.
pub fn simulate_linear(
    rng: &mut ChaCha8Rng,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    let u = DMatrix::from_fn(m, k - 1, |_, _| rng.random_range(-1.0..1.0));
    let mut x = DMatrix::zeros(n, k);
    x.set_column(0, &DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)));
    for j in 1..k {
        let next = a * x.column(j - 1) + b * u.column(j - 1);
        x.set_column(j, &next);
    }
    (x, u)
}

/// Eigenvalues of the sample covariance `Z_c Z_c^T / (K - 1)`, descending,
/// by a symmetric eigen-decomposition rather than an SVD.
pub fn covariance_eigenvalues(z: &DMatrix<f64>) -> Vec<f64> {
    let k = z.ncols();
    let mean = z.column_mean();
    let mut zc = z.clone();
    for mut c in zc.column_iter_mut() {
        c -= &mean;
    }
    let cov = &zc * zc.transpose() / (k as f64 - 1.0);
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Box-constrained variable states tried by the enumeration.
#[derive(Clone, Copy, PartialEq)]
enum Face {
    Free,
    Lower,
    Upper,
}

/// Exact minimizer of a strictly convex QP by enumerating active sets:
/// each combination of bound faces and active inequality rows defines an
/// equality-constrained problem solved from its KKT system; the best
/// primal-feasible candidate is the global optimum.
pub fn enumerate_qp(p: &QpProblem) -> (DVector<f64>, f64) {
    let d = p.dim();
    let rows = p.num_ineq();
    let boxed: Vec<usize> = (0..d)
        .filter(|&i| p.lb[i].is_finite() || p.ub[i].is_finite())
        .collect();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut faces = vec![Face::Free; boxed.len()];
    loop {
        for mask in 0u32..(1 << rows) {
            if let Some(z) = solve_face(p, &boxed, &faces, mask) {
                if feasible(p, &z, 1e-9) {
                    let f = p.objective(&z);
                    if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                        best = Some((z, f));
                    }
                }
            }
        }
        // next face assignment, odometer style
        let mut i = 0;
        loop {
            if i == faces.len() {
                return best.expect("feasible QP has a candidate");
            }
            let v = boxed[i];
            faces[i] = match faces[i] {
                Face::Free if p.lb[v].is_finite() => Face::Lower,
                Face::Free | Face::Lower if p.ub[v].is_finite() => Face::Upper,
                _ => Face::Free,
            };
            if faces[i] != Face::Free {
                break;
            }
            i += 1;
        }
    }
}

fn solve_face(p: &QpProblem, boxed: &[usize], faces: &[Face], mask: u32) -> Option<DVector<f64>> {
    let d = p.dim();
    let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for (k, &v) in boxed.iter().enumerate() {
        match faces[k] {
            Face::Lower => eq_rows.push((unit(d, v), p.lb[v])),
            Face::Upper => eq_rows.push((unit(d, v), p.ub[v])),
            Face::Free => {}
        }
    }
    for r in 0..p.num_ineq() {
        if mask & (1 << r) != 0 {
            eq_rows.push((p.g_ineq.row(r).transpose(), p.h_ineq[r]));
        }
    }
    let a = eq_rows.len();
    if a > d {
        return None;
    }
    let n = d + a;
    let mut kkt = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    kkt.view_mut((0, 0), (d, d)).copy_from(&p.hessian);
    rhs.rows_mut(0, d).copy_from(&(-&p.linear));
    for (j, (row, val)) in eq_rows.iter().enumerate() {
        for i in 0..d {
            kkt[(d + j, i)] = row[i];
            kkt[(i, d + j)] = row[i];
        }
        rhs[d + j] = *val;
    }
    let lu = kkt.full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    let z = sol.rows(0, d).into_owned();
    z.iter().all(|v| v.is_finite()).then_some(z)
}

fn unit(d: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(d);
    e[i] = 1.0;
    e
}

pub fn feasible(p: &QpProblem, z: &DVector<f64>, tol: f64) -> bool {
    for i in 0..p.dim() {
        if z[i] < p.lb[i] - tol || z[i] > p.ub[i] + tol {
            return false;
        }
    }
    if p.num_ineq() > 0 {
        let gz = &p.g_ineq * z;
        if (0..p.num_ineq()).any(|r| gz[r] > p.h_ineq[r] + tol) {
            return false;
        }
    }
    true
}

/// A strictly convex QP with a strictly feasible point. The number of
/// finite bounds and inequality rows is kept small enough to enumerate.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let d = rng.random_range(1..=20usize);
    let p = rng.random_range(0..=10usize);
    // enumeration cost is 3^(boxed) * 2^p
    let mut budget_boxed = 0;
    while budget_boxed < d && 3f64.powi(budget_boxed as i32 + 1) * 2f64.powi(p as i32) <= 30_000.0 {
        budget_boxed += 1;
    }
    let boxed = rng.random_range(0..=budget_boxed);
    let m = gaussian_matrix(rng, d, d);
    let hessian = m.transpose() * &m + DMatrix::identity(d, d) * 0.1;
    let linear = gaussian_matrix(rng, d, 1).column(0) * 5.0;
    let z0 = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
    let mut lb = DVector::from_element(d, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(d, f64::INFINITY);
    for i in 0..boxed {
        let v = rng.random_range(0..d);
        let _ = i;
        match rng.random_range(0..3) {
            0 => lb[v] = z0[v] - rng.random_range(0.05..1.0),
            1 => ub[v] = z0[v] + rng.random_range(0.05..1.0),
            _ => {
                lb[v] = z0[v] - rng.random_range(0.05..1.0);
                ub[v] = z0[v] + rng.random_range(0.05..1.0);
            }
        }
    }
    let g = gaussian_matrix(rng, p, d);
    let h = &g * &z0 + DVector::from_fn(p, |_, _| rng.random_range(0.05..1.0));
    QpProblem {
        hessian,
        linear: linear.into_owned(),
        lb,
        ub,
        g_ineq: g,
        h_ineq: h,
    }
}

/// Samples where three planted library entries drive two outputs with
/// Gaussian noise. Returns the library, the planted indices and the
/// Kalman estimate over all samples.
pub fn planted_library_problem(seed: u64, noise: f64) -> (FunctionLibrary, Vec<usize>, CoefficientEstimate) {
    use rokmpc::lifting::{Family, LibraryEntry};
    let mut rng = rng(seed);
    let dim = 7;
    // multilinear products are mutually orthogonal under a symmetric sampling
    // law; the single-variable families overlap only within one coordinate
    let cfg = LibraryConfig {
        families: vec![Family::Sin, Family::Products, Family::Hermite],
        hermite_degrees: vec![2, 3],
        ..LibraryConfig::default()
    };
    let samples: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let lib = FunctionLibrary::build(&cfg, dim, &samples).unwrap();
    let planted_entries = [
        LibraryEntry::Product { vars: vec![0, 2] },
        LibraryEntry::Sin { var: 1 },
        LibraryEntry::Hermite { var: 3, degree: 3 },
    ];
    let planted: Vec<usize> = planted_entries
        .iter()
        .map(|e| lib.entries.iter().position(|x| x == e).unwrap())
        .collect();
    let coef = [[1.5, -0.8], [-1.2, 0.0], [0.0, 0.9]];
    let kcfg = KalmanGsindyConfig::default();
    let mut est = CoefficientEstimate::new(lib.len(), 2, kcfg.p0);
    for x in &samples {
        let theta = lib.evaluate_row(x).unwrap();
        let mut y = [0.0; 2];
        for (k, &i) in planted.iter().enumerate() {
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += coef[k][j] * theta[i];
            }
        }
        for yj in &mut y {
            let e: f64 = StandardNormal.sample(&mut rng);
            *yj += noise * e;
        }
        est.update(&theta, &y, 0.0, kcfg.r_meas).unwrap();
    }
    (lib, planted, est)
}
