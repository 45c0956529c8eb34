//! Dense strictly convex QP:
//!
//! ```text
//! min 1/2 z'Hz + g'z   s.t.  lb <= z <= ub,  G z <= h
//! ```
//!
//! solved by operator splitting with equilibration and an active-set
//! polishing pass. Every returned solution carries its KKT residual on the
//! original (unscaled) data.

mod admm;
mod dump;

pub use admm::{solve, warm_start};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// `p x d`; `p = 0` is allowed.
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
}

impl QpProblem {
    /// Box-constrained problem with no general inequalities.
    pub fn boxed(hessian: DMatrix<f64>, linear: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        let d = linear.len();
        Self {
            hessian,
            linear,
            lb,
            ub,
            g_ineq: DMatrix::zeros(0, d),
            h_ineq: DVector::zeros(0),
        }
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let d = linear.len();
        Self::boxed(
            hessian,
            linear,
            DVector::from_element(d, f64::NEG_INFINITY),
            DVector::from_element(d, f64::INFINITY),
        )
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h_ineq.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.hessian.shape() != (d, d) {
            return Err(Error::dim("QP Hessian", d, self.hessian.nrows()));
        }
        if self.lb.len() != d || self.ub.len() != d {
            return Err(Error::dim("QP bounds", d, self.lb.len().min(self.ub.len())));
        }
        if self.g_ineq.ncols() != d || self.g_ineq.nrows() != self.h_ineq.len() {
            return Err(Error::dim("QP inequality rows", self.h_ineq.len(), self.g_ineq.nrows()));
        }
        if !crate::linalg::is_symmetric(&self.hessian, 1e-10) {
            return Err(Error::InvalidArgument("QP Hessian is not symmetric".into()));
        }
        if self.hessian.iter().chain(self.linear.iter()).chain(self.g_ineq.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("QP data is not finite".into()));
        }
        for i in 0..d {
            if !(self.lb[i] <= self.ub[i]) || self.lb[i] == f64::INFINITY || self.ub[i] == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "QP bound {i}: [{}, {}] is empty",
                    self.lb[i], self.ub[i]
                )));
            }
        }
        if self.h_ineq.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::InvalidArgument("QP inequality right-hand side is invalid".into()));
        }
        Ok(())
    }

    /// KKT residual of a primal-dual pair: the largest of stationarity,
    /// primal infeasibility, complementarity and dual-sign violation.
    pub fn kkt_residual(&self, z: &DVector<f64>, duals: &Duals) -> f64 {
        let mut grad = &self.hessian * z + &self.linear;
        grad -= &duals.lower;
        grad += &duals.upper;
        grad += self.g_ineq.tr_mul(&duals.ineq);
        let mut res = grad.amax();

        let gz = &self.g_ineq * z;
        let mut pair = |slack: f64, mult: f64| {
            // slack >= 0 when feasible; mult >= 0 when dual feasible
            res = res.max(-slack).max(-mult);
            let c = if slack.is_finite() { (mult * slack).abs() } else { mult.abs() };
            res = res.max(c);
        };
        for i in 0..self.dim() {
            pair(z[i] - self.lb[i], duals.lower[i]);
            pair(self.ub[i] - z[i], duals.upper[i]);
        }
        for i in 0..self.num_ineq() {
            pair(self.h_ineq[i] - gz[i], duals.ineq[i]);
        }
        res
    }

    /// Writes the problem as plain text for cross-checking elsewhere.
    pub fn write_text<W: std::io::Write>(&self, w: W) -> Result<()> {
        dump::write(self, w)
    }

    pub fn read_text<R: std::io::BufRead>(r: R) -> Result<Self> {
        dump::read(r)
    }
}

/// Nonnegative multipliers of `z >= lb`, `z <= ub` and `G z <= h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub ineq: DVector<f64>,
}

impl Duals {
    pub fn zeros(d: usize, p: usize) -> Self {
        Self {
            lower: DVector::zeros(d),
            upper: DVector::zeros(d),
            ineq: DVector::zeros(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub duals: Duals,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Wall clock, seconds.
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Iterations without primal progress before infeasibility is checked.
    pub stall_window: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            polish: true,
            stall_window: 100,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.rho > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidArgument("QP tol, rho and sigma must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::InvalidArgument(format!("relaxation {} outside (0, 2)", self.alpha)));
        }
        if self.max_iter == 0 || self.stall_window == 0 {
            return Err(Error::InvalidArgument("QP iteration limits must be positive".into()));
        }
        Ok(())
    }
}
