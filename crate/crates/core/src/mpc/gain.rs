use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row_major, spectral_radius};
use crate::scaling::AffineScaling;

const RICCATI_MAX_ITER: usize = 100_000;
const RICCATI_REL_TOL: f64 = 1e-10;

/// State feedback `u = K e` with a Schur-stable `A + B K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustGain {
    #[serde(with = "row_major")]
    pub k: DMatrix<f64>,
    pub spectral_radius: f64,
}

impl RobustGain {
    /// `K = 0`; only valid when `A` itself is Schur stable.
    pub fn zero(a: &DMatrix<f64>, m: usize) -> Result<Self> {
        let rho = spectral_radius(a);
        if !(rho < 1.0) {
            return Err(Error::NotSchurStable(rho));
        }
        Ok(Self {
            k: DMatrix::zeros(m, a.nrows()),
            spectral_radius: rho,
        })
    }

    pub fn closed_loop(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a + b * &self.k
    }
}

/// Infinite-horizon discrete LQR gain from the Riccati fixed point.
pub fn design_feedback_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RobustGain> {
    let (n, m) = (a.nrows(), b.ncols());
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::dim("gain design A/B", n, b.nrows()));
    }
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dim("gain design weights", n, q.nrows()));
    }
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITER {
        let bp = b.tr_mul(&p);
        let s = r + &bp * b;
        let bpa = &bp * a;
        let sol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NoConvergence("R + B'PB lost definiteness".into()))?
            .solve(&bpa);
        let next = q + a.tr_mul(&(&p * a)) - bpa.tr_mul(&sol);
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).amax() / next.amax().max(f64::MIN_POSITIVE);
        p = next;
        if !change.is_finite() {
            return Err(Error::NoConvergence("Riccati iterate is not finite".into()));
        }
        if change < RICCATI_REL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "Riccati recursion did not settle in {RICCATI_MAX_ITER} iterations"
        )));
    }
    let bp = b.tr_mul(&p);
    let s = r + &bp * b;
    let k = -s
        .cholesky()
        .ok_or_else(|| Error::NoConvergence("R + B'PB is not positive definite".into()))?
        .solve(&(&bp * a));
    let rho = spectral_radius(&(a + b * &k));
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable(rho));
    }
    Ok(RobustGain {
        k,
        spectral_radius: rho,
    })
}

/// Bound on `sup_k |e_k|` for `e+ = A_K e + w` with `e_0 = 0` and
/// `|w_k| <= w_max` (Euclidean). Sums `|A_K^i|` up to the first power `M`
/// with `|A_K^M| < 1` and closes the tail geometrically with that factor,
/// so a single `|A_K| < 1` gives `w_max / (1 - |A_K|)`.
pub fn error_bound(a_k: &DMatrix<f64>, w_max: f64) -> Result<f64> {
    const MAX_POWER: usize = 100_000;
    let n = a_k.nrows();
    if a_k.ncols() != n {
        return Err(Error::dim("error bound A_K", n, a_k.ncols()));
    }
    let norm2 = |m: &DMatrix<f64>| m.singular_values().max();
    let mut power = DMatrix::identity(n, n);
    let mut partial = 0.0;
    for _ in 0..MAX_POWER {
        partial += norm2(&power);
        power = &power * a_k;
        let contraction = norm2(&power);
        if contraction < 1.0 {
            return Ok(w_max * partial / (1.0 - contraction));
        }
        if !contraction.is_finite() {
            break;
        }
    }
    Err(Error::NotSchurStable(spectral_radius(a_k)))
}

/// `u = clip(u_hat + K e)`: the correction is added in normalized input
/// coordinates, then the physical input is clamped to `[lower, upper]`.
/// Returns the input and whether clamping changed it.
pub fn robust_action(
    u_hat_n: &DVector<f64>,
    e_q: &DVector<f64>,
    gain: &RobustGain,
    scaling: &AffineScaling,
    lower: &[f64],
    upper: &[f64],
) -> (Vec<f64>, bool) {
    let corrected = u_hat_n + &gain.k * e_q;
    let raw = scaling.invert(corrected.as_slice());
    clamp_input(raw, lower, upper)
}

pub(crate) fn clamp_input(raw: Vec<f64>, lower: &[f64], upper: &[f64]) -> (Vec<f64>, bool) {
    let mut saturated = false;
    let out = raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = v.clamp(lower[i], upper[i]);
            saturated |= c != *v;
            c
        })
        .collect();
    (out, saturated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_bound_matches_geometric_series_for_contractions() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.25]);
        let b = error_bound(&a, 2.0).unwrap();
        assert!((b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn error_bound_handles_non_normal_stable_matrices() {
        // |A| > 1 but rho(A) = 0.5
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 3.0, 0.0, 0.5]);
        let b = error_bound(&a, 1.0).unwrap();
        let mut e = DVector::zeros(2);
        let w = DVector::from_vec(vec![0.0, 1.0]);
        for _ in 0..200 {
            e = &a * e + &w;
            assert!(e.norm() <= b);
        }
        assert!(error_bound(&DMatrix::from_element(1, 1, 1.0), 1.0).is_err());
    }

    #[test]
    fn scalar_gain_matches_closed_form() {
        // p = q + a^2 p - a^2 p^2 b^2 / (r + b^2 p) with a=0.5, b=q=r=1
        // => p^2 - 0.25 p - 1 = 0
        let (a, b, q, r) = (0.5, 1.0, 1.0, 1.0);
        let p = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        let k_exact = -(b * p * a) / (r + b * b * p);
        let g = design_feedback_gain(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, b),
            &DMatrix::from_element(1, 1, q),
            &DMatrix::from_element(1, 1, r),
        )
        .unwrap();
        assert!((g.k[(0, 0)] - k_exact).abs() < 1e-9);
        assert!((g.spectral_radius - (a + b * k_exact).abs()).abs() < 1e-9);
    }

    #[test]
    fn no_actuation_gives_zero_gain() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let b = DMatrix::zeros(2, 1);
        let g = design_feedback_gain(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        assert!(g.k.iter().all(|v| *v == 0.0));
        assert_eq!(g.closed_loop(&a, &b), a);
    }

    #[test]
    fn unstabilizable_pair_is_an_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(design_feedback_gain(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn unstable_plant_is_stabilized() {
        let a = DMatrix::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.95]);
        let b = DMatrix::from_row_slice(2, 1, &[0.2, 1.0]);
        let g = design_feedback_gain(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        assert!(g.spectral_radius < 1.0);
    }

    #[test]
    fn zero_error_or_zero_gain_is_nominal() {
        let s = AffineScaling::from_bounds(&[0.0, 10.0], &[2.0, 20.0]).unwrap();
        let u = DVector::from_vec(vec![0.3, 0.9]);
        let nominal = s.invert(u.as_slice());
        let g = RobustGain {
            k: DMatrix::from_element(2, 3, 0.7),
            spectral_radius: 0.5,
        };
        let (out, sat) = robust_action(&u, &DVector::zeros(3), &g, &s, &[0.0, 10.0], &[2.0, 20.0]);
        assert_eq!(out, nominal);
        assert!(!sat);
        let zero = RobustGain {
            k: DMatrix::zeros(2, 3),
            spectral_radius: 0.5,
        };
        let (out, _) = robust_action(&u, &DVector::from_element(3, 4.0), &zero, &s, &[0.0, 10.0], &[2.0, 20.0]);
        assert_eq!(out, nominal);
    }

    #[test]
    fn correction_saturates_at_upper_bound() {
        let s = AffineScaling::from_bounds(&[0.0], &[1.0]).unwrap();
        let g = RobustGain {
            k: DMatrix::from_element(1, 1, 1.0),
            spectral_radius: 0.5,
        };
        let (out, sat) = robust_action(&DVector::from_element(1, 1.0), &DVector::from_element(1, 0.2), &g, &s, &[0.0], &[1.0]);
        assert_eq!(out, vec![1.0]);
        assert!(sat);
    }
}
