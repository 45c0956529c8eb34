//! Recursive Kalman estimation of library coefficients. With the identity
//! transition, each sample is one scalar-innovation measurement update shared
//! by all output columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanGsindyConfig {
    /// Process-noise scale, `Q* = q_proc * I`.
    pub q_proc: f64,
    /// Measurement-noise scale, `R* = r_meas`.
    pub r_meas: f64,
    /// Initial covariance scale, `P_0 = p0 * I`.
    pub p0: f64,
    /// Selection threshold on `max_j |omega[i, j]|`.
    pub lambda: f64,
}

impl Default for KalmanGsindyConfig {
    fn default() -> Self {
        Self {
            q_proc: 1e-6,
            r_meas: 1e-2,
            p0: 100.0,
            lambda: 0.1,
        }
    }
}

impl KalmanGsindyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("q_proc", self.q_proc),
            ("r_meas", self.r_meas),
            ("p0", self.p0),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Coefficients `omega` (library size x outputs) and their covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub omega: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub samples: usize,
}

impl CoefficientEstimate {
    pub fn new(library_size: usize, outputs: usize, p0: f64) -> Self {
        Self {
            omega: DMatrix::zeros(library_size, outputs),
            cov: DMatrix::identity(library_size, library_size) * p0,
            samples: 0,
        }
    }

    pub fn library_size(&self) -> usize {
        self.omega.nrows()
    }

    /// Row-wise `max_j |omega[i, j]|`.
    pub fn row_magnitudes(&self) -> Vec<f64> {
        self.omega
            .row_iter()
            .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect()
    }

    /// Prediction with `F = I` followed by the measurement update for one
    /// sample with regressor row `theta` and measurement `y`.
    pub fn update(&mut self, theta: &DVector<f64>, y: &[f64], q_proc: f64, r_meas: f64) -> Result<()> {
        let nl = self.library_size();
        if theta.len() != nl {
            return Err(Error::dim("Kalman regressor row", nl, theta.len()));
        }
        if y.len() != self.omega.ncols() {
            return Err(Error::dim("Kalman measurement", self.omega.ncols(), y.len()));
        }
        if q_proc != 0.0 {
            for i in 0..nl {
                self.cov[(i, i)] += q_proc;
            }
        }
        let p_theta = &self.cov * theta;
        let s = theta.dot(&p_theta) + r_meas;
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InnovationCovariance(s));
        }
        let gain = &p_theta / s;
        let predicted = self.omega.tr_mul(theta);
        let innovation = DVector::from_column_slice(y) - predicted;
        self.omega.ger(1.0, &gain, &innovation, 1.0);
        self.cov.ger(-1.0 / s, &p_theta, &p_theta, 1.0);
        // symmetrize
        for i in 0..nl {
            for j in i + 1..nl {
                let m = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = m;
                self.cov[(j, i)] = m;
            }
        }
        self.samples += 1;
        Ok(())
    }
}

pub fn kalman_gsindy_step(
    mut est: CoefficientEstimate,
    measurement: &[f64],
    theta: &DVector<f64>,
    cfg: &KalmanGsindyConfig,
) -> Result<CoefficientEstimate> {
    est.update(theta, measurement, cfg.q_proc, cfg.r_meas)?;
    Ok(est)
}

/// Folds the recursion over `(theta_k, y_k)` pairs starting from the prior.
pub fn fold_kalman_gsindy<'a, I>(
    library_size: usize,
    outputs: usize,
    pairs: I,
    cfg: &KalmanGsindyConfig,
) -> Result<CoefficientEstimate>
where
    I: IntoIterator<Item = (DVector<f64>, &'a [f64])>,
{
    let mut est = CoefficientEstimate::new(library_size, outputs, cfg.p0);
    for (theta, y) in pairs {
        est.update(&theta, y, cfg.q_proc, cfg.r_meas)?;
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_update_matches_kalman_gain_formula() {
        let (p0, q, r) = (2.0, 0.5, 0.25);
        let mut est = CoefficientEstimate::new(1, 1, p0);
        est.update(&DVector::from_element(1, 1.0), &[1.0], q, r).unwrap();
        let expected = (p0 + q) / (p0 + q + r);
        assert!((est.omega[(0, 0)] - expected).abs() < 1e-15);
        let expected_p = (p0 + q) * r / (p0 + q + r);
        assert!((est.cov[(0, 0)] - expected_p).abs() < 1e-15);
    }

    #[test]
    fn infinite_measurement_noise_leaves_estimate_unchanged() {
        let mut est = CoefficientEstimate::new(3, 2, 10.0);
        est.omega[(1, 0)] = 0.7;
        let before = est.clone();
        let theta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        est.update(&theta, &[4.0, -3.0], 0.0, 1e300).unwrap();
        assert!((&est.omega - &before.omega).amax() < 1e-290);
        assert!((&est.cov - &before.cov).amax() < 1e-290);
    }

    #[test]
    fn nonpositive_innovation_is_rejected() {
        let mut est = CoefficientEstimate::new(1, 1, 1.0);
        let err = est.update(&DVector::from_element(1, 1.0), &[0.0], 0.0, -5.0);
        assert!(matches!(err, Err(Error::InnovationCovariance(_))));
    }

    #[test]
    fn dimension_checks() {
        let mut est = CoefficientEstimate::new(2, 1, 1.0);
        assert!(est.update(&DVector::zeros(3), &[0.0], 0.0, 1.0).is_err());
        assert!(est.update(&DVector::zeros(2), &[0.0, 1.0], 0.0, 1.0).is_err());
    }
}
