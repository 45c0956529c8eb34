//! Tracking MPC on a (reduced) Koopman predictor: condensed QP assembly,
//! receding-horizon step, LQR feedback for the robust correction, and the
//! closed-loop harness.

mod closed_loop;
mod gain;

pub use closed_loop::{
    run_closed_loop, scaled_rmse, CaseWindow, ClosedLoopResult, ControllerKind, Scenario,
    SetPointChange, StepLog,
};
pub use gain::{design_feedback_gain, error_bound, robust_action, RobustGain};

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::koopman::ReducedKoopmanModel;
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus};

/// Residual up to which a `MaxIter` solution is still applied.
const MAX_ITER_ACCEPT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Weight on predicted latent states, `r x r`.
    pub q_weight: DMatrix<f64>,
    /// Weight on bound-normalized inputs, `m x m`.
    pub r_weight: DMatrix<f64>,
    /// Physical input box.
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// Optional physical box on reconstructed states.
    pub state_box: Option<(Vec<f64>, Vec<f64>)>,
    pub dt: f64,
    pub qp: QpSettings,
    /// Where to write the QP of a failed step.
    pub dump_dir: Option<PathBuf>,
}

impl MpcConfig {
    pub fn diagonal(horizon: usize, q_diag: &[f64], r_diag: &[f64], u_min: Vec<f64>, u_max: Vec<f64>, dt: f64) -> Self {
        Self {
            horizon,
            q_weight: DMatrix::from_diagonal(&DVector::from_row_slice(q_diag)),
            r_weight: DMatrix::from_diagonal(&DVector::from_row_slice(r_diag)),
            u_min,
            u_max,
            state_box: None,
            dt,
            qp: QpSettings::default(),
            dump_dir: None,
        }
    }

    pub fn validate(&self, model: &ReducedKoopmanModel) -> Result<()> {
        let (r, m, n) = (model.order(), model.input_dim(), model.state_dim());
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("control horizon must be at least 1".into()));
        }
        if self.q_weight.shape() != (r, r) {
            return Err(Error::dim("state weight", r, self.q_weight.nrows()));
        }
        if self.r_weight.shape() != (m, m) {
            return Err(Error::dim("input weight", m, self.r_weight.nrows()));
        }
        if self.u_min.len() != m || self.u_max.len() != m {
            return Err(Error::dim("input bounds", m, self.u_min.len().min(self.u_max.len())));
        }
        if self.u_min.iter().zip(&self.u_max).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("input box is empty".into()));
        }
        if let Some((lo, hi)) = &self.state_box {
            if lo.len() != n || hi.len() != n {
                return Err(Error::dim("state box", n, lo.len().min(hi.len())));
            }
        }
        check_pd(&self.q_weight, "state weight")?;
        check_pd(&self.r_weight, "input weight")?;
        self.qp.validate()
    }
}

fn check_pd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !crate::linalg::is_symmetric(m, 1e-12) {
        return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what} is not positive definite (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

/// Tracking target `(x_s, u_s)` with its latent image `q_s = phi Psi(x_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetPoint {
    pub x_s: Vec<f64>,
    pub u_s: Vec<f64>,
    pub q_s: DVector<f64>,
    /// `u_s` in the model's normalized input coordinates.
    pub u_s_n: DVector<f64>,
    pub activation_time: f64,
}

impl SetPoint {
    pub fn new(model: &ReducedKoopmanModel, x_s: &[f64], u_s: &[f64], activation_time: f64) -> Result<Self> {
        if u_s.len() != model.input_dim() {
            return Err(Error::dim("set-point input", model.input_dim(), u_s.len()));
        }
        Ok(Self {
            q_s: model.encode(x_s)?,
            u_s_n: model.scale_input(u_s),
            x_s: x_s.to_vec(),
            u_s: u_s.to_vec(),
            activation_time,
        })
    }
}

/// Stacked prediction `q_{1..Nc} = Phi q_0 + Gamma U`.
pub struct Prediction {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

pub fn prediction_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Result<Prediction> {
    let (r, m) = (a.nrows(), b.ncols());
    let mut phi = DMatrix::zeros(horizon * r, r);
    let mut gamma = DMatrix::zeros(horizon * r, horizon * m);
    // powers[k] = A^k B
    let mut ab = b.clone();
    let mut ak = a.clone();
    for k in 0..horizon {
        phi.view_mut((k * r, 0), (r, r)).copy_from(&ak);
        for j in k..horizon {
            gamma.view_mut((j * r, (j - k) * m), (r, m)).copy_from(&ab);
        }
        if k + 1 < horizon {
            ab = a * &ab;
            ak = a * &ak;
        }
    }
    if phi.iter().chain(gamma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCondensing(format!(
            "prediction matrices over {horizon} steps overflow"
        )));
    }
    Ok(Prediction { phi, gamma })
}

/// Condensed QP in the stacked normalized inputs. Its objective plus
/// `constant` equals `sum_j |q_j - q_s|_Q^2 + |u_{j-1} - u_s|_R^2`.
pub struct CondensedQp {
    pub problem: QpProblem,
    pub constant: f64,
}

pub fn build_condensed_qp(
    model: &ReducedKoopmanModel,
    q_current: &DVector<f64>,
    sp: &SetPoint,
    cfg: &MpcConfig,
) -> Result<CondensedQp> {
    let (r, m, nc) = (model.order(), model.input_dim(), cfg.horizon);
    if q_current.len() != r {
        return Err(Error::dim("current latent state", r, q_current.len()));
    }
    let pred = prediction_matrices(&model.a, &model.b, nc)?;

    // Qbar Gamma block by block, Qbar = blkdiag(Q)
    let mut qg = DMatrix::zeros(nc * r, nc * m);
    for j in 0..nc {
        let rows = pred.gamma.rows(j * r, r);
        qg.rows_mut(j * r, r).copy_from(&(&cfg.q_weight * rows));
    }
    let mut hessian = pred.gamma.tr_mul(&qg);
    for j in 0..nc {
        let mut blk = hessian.view_mut((j * m, j * m), (m, m));
        blk += &cfg.r_weight;
    }
    hessian *= 2.0;
    // symmetrize against roundoff
    hessian = (&hessian + hessian.transpose()) * 0.5;

    let mut dev = &pred.phi * q_current;
    for j in 0..nc {
        let mut blk = dev.rows_mut(j * r, r);
        blk -= &sp.q_s;
    }
    let mut linear = qg.tr_mul(&dev) * 2.0;
    let mut r_us = DVector::zeros(nc * m);
    let rus_blk = &cfg.r_weight * &sp.u_s_n;
    for j in 0..nc {
        r_us.rows_mut(j * m, m).copy_from(&rus_blk);
    }
    linear -= &r_us * 2.0;
    let mut constant = 0.0;
    for j in 0..nc {
        let dj = dev.rows(j * r, r);
        constant += dj.dot(&(&cfg.q_weight * dj));
    }
    constant += nc as f64 * sp.u_s_n.dot(&rus_blk);

    let lo = model.scale_input(&cfg.u_min);
    let hi = model.scale_input(&cfg.u_max);
    let lb = DVector::from_fn(nc * m, |i, _| lo[i % m]);
    let ub = DVector::from_fn(nc * m, |i, _| hi[i % m]);

    let (g_ineq, h_ineq) = match &cfg.state_box {
        None => (DMatrix::zeros(0, nc * m), DVector::zeros(0)),
        Some((xlo, xhi)) => state_constraints(model, &pred, q_current, xlo, xhi, nc),
    };
    let problem = QpProblem {
        hessian,
        linear,
        lb,
        ub,
        g_ineq,
        h_ineq,
    };
    if problem.hessian.iter().chain(problem.linear.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCondensing("condensed cost is not finite".into()));
    }
    Ok(CondensedQp { problem, constant })
}

/// `lo <= D q_j + d <= hi` for `j = 1..Nc` in normalized state coordinates.
fn state_constraints(
    model: &ReducedKoopmanModel,
    pred: &Prediction,
    q0: &DVector<f64>,
    xlo: &[f64],
    xhi: &[f64],
    nc: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = model.state_dim();
    let r = model.order();
    let d_cols = pred.gamma.ncols();
    let (dmap, offset) = model.output_map();
    let lo = model.lifting.normalizer.apply(xlo);
    let hi = model.lifting.normalizer.apply(xhi);
    let free = &pred.phi * q0;
    let mut g = DMatrix::zeros(2 * n * nc, d_cols);
    let mut h = DVector::zeros(2 * n * nc);
    for j in 0..nc {
        let dg = &dmap * pred.gamma.rows(j * r, r);
        let base = &dmap * free.rows(j * r, r) + &offset;
        for i in 0..n {
            let row = 2 * (j * n + i);
            g.row_mut(row).copy_from(&dg.row(i));
            h[row] = hi[i] - base[i];
            g.row_mut(row + 1).copy_from(&(-dg.row(i)));
            h[row + 1] = base[i] - lo[i];
        }
    }
    (g, h)
}

/// Outcome of one receding-horizon solve.
#[derive(Debug, Clone)]
pub struct MpcStep {
    /// Optimal stacked inputs, normalized, one vector per step.
    pub u_seq: Vec<DVector<f64>>,
    pub q_current: DVector<f64>,
    /// `A q_current + B u_seq[0]`.
    pub q_next: DVector<f64>,
    pub solution: QpSolution,
    /// Condensing plus solve, seconds.
    pub elapsed: f64,
}

impl MpcStep {
    pub fn first_input_raw(&self, model: &ReducedKoopmanModel) -> Vec<f64> {
        model.unscale_input(&self.u_seq[0]).as_slice().to_vec()
    }
}

/// Lifts and projects `x_k`, solves the condensed QP and returns the
/// optimal sequence with the nominal one-step prediction.
pub fn mpc_step(
    model: &ReducedKoopmanModel,
    x_k: &[f64],
    sp: &SetPoint,
    cfg: &MpcConfig,
    warm: Option<&QpSolution>,
) -> Result<MpcStep> {
    let q_current = model.encode(x_k)?;
    let start = Instant::now();
    let condensed = build_condensed_qp(model, &q_current, sp, cfg)?;
    let solution = match warm {
        Some(prev) if prev.z.len() == condensed.problem.dim() && prev.duals.ineq.len() == condensed.problem.num_ineq() => {
            qp::warm_start(&condensed.problem, prev, &cfg.qp)?
        }
        _ => qp::solve(&condensed.problem, &cfg.qp)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let usable = match solution.status {
        QpStatus::Optimal => true,
        QpStatus::MaxIter => {
            log::warn!("QP hit the iteration limit (KKT residual {:.2e})", solution.kkt_residual);
            solution.kkt_residual <= MAX_ITER_ACCEPT
        }
        QpStatus::Infeasible => false,
    };
    if !usable {
        let mut msg = format!(
            "QP {:?} with KKT residual {:.3e}",
            solution.status, solution.kkt_residual
        );
        if let Some(dir) = &cfg.dump_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("qp_failed_{}.txt", std::process::id()));
            condensed.problem.write_text(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            msg.push_str(&format!("; problem written to {}", path.display()));
        }
        return Err(Error::Infeasible(msg));
    }
    let m = model.input_dim();
    let u_seq: Vec<DVector<f64>> = (0..cfg.horizon)
        .map(|j| solution.z.rows(j * m, m).into_owned())
        .collect();
    let q_next = model.step(&q_current, &u_seq[0]);
    Ok(MpcStep {
        u_seq,
        q_current,
        q_next,
        solution,
        elapsed,
    })
}

/// Open-loop model cost of a normalized input sequence from `q0`.
pub fn sequence_cost(
    model: &ReducedKoopmanModel,
    q0: &DVector<f64>,
    u_seq: &[DVector<f64>],
    sp: &SetPoint,
    cfg: &MpcConfig,
) -> f64 {
    let mut q = q0.clone();
    let mut cost = 0.0;
    for u in u_seq {
        q = model.step(&q, u);
        let dq = &q - &sp.q_s;
        let du = u - &sp.u_s_n;
        cost += dq.dot(&(&cfg.q_weight * &dq)) + du.dot(&(&cfg.r_weight * &du));
    }
    cost
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::koopman::{fit_full, Snapshots};
    use crate::lifting::LiftingMap;
    use crate::scaling::AffineScaling;

    pub(crate) fn toy_model() -> ReducedKoopmanModel {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.5]);
        let mut x = DMatrix::zeros(2, 40);
        let u = DMatrix::from_fn(1, 39, |_, k| ((k * 7919) % 13) as f64 / 13.0);
        for k in 1..40 {
            let next = &a * x.column(k - 1) + &b * u.column(k - 1);
            x.set_column(k, &next);
        }
        let snaps = Snapshots::new(x, u).unwrap();
        fit_full(&snaps, &LiftingMap::identity(AffineScaling::identity(2)), &AffineScaling::identity(1))
            .unwrap()
            .as_reduced()
    }

    fn toy_cfg(horizon: usize) -> MpcConfig {
        MpcConfig::diagonal(horizon, &[1.0, 2.0], &[0.5], vec![-1.0], vec![1.0], 1.0)
    }

    #[test]
    fn at_reference_the_optimum_is_u_s_with_zero_cost() {
        let m = toy_model();
        // steady state of q = A q + B u_s with u_s = 0.2
        let a = &m.a;
        let us = DVector::from_element(1, 0.2);
        let qs = (DMatrix::identity(2, 2) - a).lu().solve(&(&m.b * &us)).unwrap();
        let sp = SetPoint::new(&m, qs.as_slice(), &[0.2], 0.0).unwrap();
        let cfg = toy_cfg(5);
        let c = build_condensed_qp(&m, &sp.q_s, &sp, &cfg).unwrap();
        let sol = qp::solve(&c.problem, &cfg.qp).unwrap();
        assert!(sol.z.iter().all(|v| (v - 0.2).abs() < 1e-6));
        assert!((sol.objective + c.constant).abs() < 1e-9);
    }

    #[test]
    fn single_step_hessian_is_hand_derived() {
        let m = toy_model();
        let cfg = toy_cfg(1);
        let sp = SetPoint::new(&m, &[0.3, 0.1], &[0.0], 0.0).unwrap();
        let c = build_condensed_qp(&m, &sp.q_s, &sp, &cfg).unwrap();
        let expect = (m.b.transpose() * &cfg.q_weight * &m.b + &cfg.r_weight) * 2.0;
        assert!((c.problem.hessian - expect).amax() < 1e-14);
    }

    #[test]
    fn condensed_objective_matches_rollout_cost() {
        let m = toy_model();
        let cfg = toy_cfg(6);
        let sp = SetPoint::new(&m, &[0.3, 0.1], &[0.1], 0.0).unwrap();
        let q0 = DVector::from_vec(vec![-0.4, 0.7]);
        let c = build_condensed_qp(&m, &q0, &sp, &cfg).unwrap();
        let u: Vec<DVector<f64>> = (0..6).map(|k| DVector::from_element(1, 0.1 * k as f64 - 0.2)).collect();
        let stacked = DVector::from_iterator(6, u.iter().map(|v| v[0]));
        let via_qp = c.problem.objective(&stacked) + c.constant;
        assert!((via_qp - sequence_cost(&m, &q0, &u, &sp, &cfg)).abs() < 1e-10);
    }

    #[test]
    fn step_respects_bounds_far_from_reference() {
        let m = toy_model();
        let cfg = toy_cfg(10);
        let sp = SetPoint::new(&m, &[5.0, 5.0], &[1.0], 0.0).unwrap();
        let s = mpc_step(&m, &[0.0, 0.0], &sp, &cfg, None).unwrap();
        assert!(s.u_seq.iter().all(|u| u[0] >= -1.0 && u[0] <= 1.0));
        assert_eq!(s.u_seq[0][0], 1.0);
    }

    #[test]
    fn indefinite_weights_are_rejected() {
        let m = toy_model();
        let cfg = MpcConfig::diagonal(3, &[1.0, -1.0], &[0.5], vec![-1.0], vec![1.0], 1.0);
        assert!(cfg.validate(&m).is_err());
    }

    #[test]
    fn state_box_is_enforced_on_predictions() {
        let m = toy_model();
        let mut cfg = toy_cfg(8);
        cfg.state_box = Some((vec![-10.0, -10.0], vec![10.0, 0.3]));
        let sp = SetPoint::new(&m, &[2.0, 1.0], &[1.0], 0.0).unwrap();
        let s = mpc_step(&m, &[0.0, 0.0], &sp, &cfg, None).unwrap();
        let mut q = s.q_current.clone();
        for u in &s.u_seq {
            q = m.step(&q, u);
            assert!(m.decode(&q)[1] <= 0.3 + 1e-6);
        }
    }
}
