use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::gain::{clamp_input, robust_action, RobustGain};
use super::{mpc_step, MpcConfig, SetPoint};
use crate::error::{Error, Result};
use crate::koopman::ReducedKoopmanModel;
use crate::plant::{
    DatasetMeta, DisturbanceGenerator, DisturbanceSpec, Integrator, PlantInput, PlantParams,
    PlantState, TrajectoryDataset,
};
use crate::qp::QpSolution;
use crate::scaling::AffineScaling;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    FullKmpc,
    ReducedKmpc,
    ReducedRkmpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [Self::FullKmpc, Self::ReducedKmpc, Self::ReducedRkmpc];

    pub fn label(&self) -> &'static str {
        match self {
            Self::FullKmpc => "full-kmpc",
            Self::ReducedKmpc => "reduced-kmpc",
            Self::ReducedRkmpc => "reduced-rkmpc",
        }
    }

    pub fn is_robust(&self) -> bool {
        matches!(self, Self::ReducedRkmpc)
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller kind {s:?}")))
    }
}

/// Target switching to `(x_s, u_s)` at `time` hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetPointChange {
    pub time: f64,
    pub x_s: PlantState,
    pub u_s: PlantInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub x0: PlantState,
    /// Hours.
    pub horizon: f64,
    /// Sorted by time; the first entry must be active at `t = 0`.
    pub setpoints: Vec<SetPointChange>,
    pub disturbance: DisturbanceSpec,
    pub disturbance_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.setpoints.is_empty() || self.setpoints[0].time > TIME_EPS {
            return Err(Error::Config(format!(
                "scenario {:?} needs a set-point active at t = 0",
                self.name
            )));
        }
        if self.setpoints.windows(2).any(|w| !(w[0].time < w[1].time)) {
            return Err(Error::Config("set-point times must increase".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("scenario horizon must be positive".into()));
        }
        Ok(())
    }

    /// Index of the set-point the controller uses at time `t`.
    pub fn active_at(&self, t: f64) -> usize {
        self.setpoints
            .iter()
            .rposition(|s| s.time <= t + TIME_EPS)
            .unwrap_or(0)
    }

    /// Index of the set-point a state sampled at `t > 0` is judged against:
    /// the one in force while that state was being produced.
    pub fn judged_at(&self, t: f64) -> usize {
        self.setpoints
            .iter()
            .rposition(|s| s.time < t - TIME_EPS)
            .unwrap_or(0)
    }
}

/// Per-step controller record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: f64,
    pub setpoint: usize,
    /// Nominal prediction `q*_{k+1}`.
    pub q_nominal: DVector<f64>,
    /// `e_{k,q} = q_k - q*_k`.
    pub error: DVector<f64>,
    pub saturated: bool,
    pub solve_time: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    pub kind: ControllerKind,
    pub scenario: Scenario,
    /// States at every sample and the inputs actually applied.
    pub trajectory: TrajectoryDataset,
    pub steps: Vec<StepLog>,
    /// Set when the controller aborted; the log covers the steps before it.
    pub failure: Option<String>,
}

impl ClosedLoopResult {
    pub fn saturation_count(&self) -> usize {
        self.steps.iter().filter(|s| s.saturated).count()
    }

    /// Mean per-step solve time over steps with `t` in `[start, end)`.
    pub fn mean_solve_time(&self, start: f64, end: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.t >= start - TIME_EPS && s.t < end - TIME_EPS)
            .map(|s| s.solve_time)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn solve_time_quantile(&self, q: f64) -> Option<f64> {
        let mut v: Vec<f64> = self.steps.iter().map(|s| s.solve_time).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let idx = ((v.len() - 1) as f64 * q).round() as usize;
        Some(v[idx])
    }
}

/// Evaluation window `(start, end]` in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseWindow {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl CaseWindow {
    pub fn new(label: &str, start: f64, end: f64) -> Self {
        Self {
            label: label.to_string(),
            start,
            end,
        }
    }

    /// Transient, steady and whole-run windows of the single set-point run.
    pub fn single_setpoint() -> Vec<Self> {
        vec![
            Self::new("I", 0.0, 1.5),
            Self::new("II", 1.5, 4.0),
            Self::new("III", 0.0, 4.0),
        ]
    }

    /// After-switch transient, steady at the second target, whole run.
    pub fn setpoint_change() -> Vec<Self> {
        vec![
            Self::new("IV", 3.0, 4.5),
            Self::new("V", 4.5, 6.0),
            Self::new("VI", 0.0, 6.0),
        ]
    }
}

/// `sqrt(1/(nK) sum_k |s(x_s) - s(x_k)|^2)` over the window.
pub fn scaled_rmse(result: &ClosedLoopResult, window: &CaseWindow, scaling: &AffineScaling) -> Result<f64> {
    let traj = &result.trajectory;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, x) in traj.states.iter().enumerate() {
        let t = traj.time(k);
        if t <= window.start + TIME_EPS || t > window.end + TIME_EPS {
            continue;
        }
        let target = result.scenario.setpoints[result.scenario.judged_at(t)].x_s;
        let xs = scaling.apply(x.as_slice());
        let ts = scaling.apply(target.as_slice());
        sum += xs.iter().zip(&ts).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "window {} ({}, {}] holds no samples",
            window.label, window.start, window.end
        )));
    }
    Ok((sum / (count as f64 * scaling.dim() as f64)).sqrt())
}

/// Shifts a horizon solution one step forward, repeating the last block.
fn shift_solution(sol: &QpSolution, m: usize) -> QpSolution {
    let shift = |v: &DVector<f64>| {
        let d = v.len();
        if d < m {
            return v.clone();
        }
        DVector::from_fn(d, |i, _| if i + m < d { v[i + m] } else { v[i] })
    };
    let mut out = sol.clone();
    out.z = shift(&sol.z);
    out.duals.lower = shift(&sol.duals.lower);
    out.duals.upper = shift(&sol.duals.upper);
    // general inequalities are tied to the old initial state
    out.duals.ineq.fill(0.0);
    out
}

/// Runs one controller against the plant. `gain` is required for the
/// robust variant and ignored otherwise. A controller failure ends the run
/// early and is reported in `failure`.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    plant: &PlantParams,
    integrator: &Integrator,
    model: &ReducedKoopmanModel,
    kind: ControllerKind,
    cfg: &MpcConfig,
    gain: Option<&RobustGain>,
    scenario: &Scenario,
) -> Result<ClosedLoopResult> {
    scenario.validate()?;
    cfg.validate(model)?;
    let gain = match (kind.is_robust(), gain) {
        (true, Some(g)) => {
            if g.k.shape() != (model.input_dim(), model.order()) {
                return Err(Error::dim("feedback gain", model.order(), g.k.ncols()));
            }
            if !(g.spectral_radius < 1.0) {
                return Err(Error::NotSchurStable(g.spectral_radius));
            }
            Some(g)
        }
        (true, None) => {
            return Err(Error::InvalidArgument("robust controller needs a feedback gain".into()))
        }
        (false, _) => None,
    };
    let setpoints = scenario
        .setpoints
        .iter()
        .map(|s| SetPoint::new(model, s.x_s.as_slice(), s.u_s.as_slice(), s.time))
        .collect::<Result<Vec<_>>>()?;

    let dt = cfg.dt;
    let steps_total = (scenario.horizon / dt).round() as usize;
    let mut disturbances = DisturbanceGenerator::new(scenario.disturbance, scenario.disturbance_seed)?;
    let mut x = scenario.x0;
    let mut states = vec![x];
    let mut inputs = Vec::with_capacity(steps_total);
    let mut logs = Vec::with_capacity(steps_total);
    let mut meta = DatasetMeta::new(dt);
    meta.seed = Some(scenario.disturbance_seed);
    meta.scenario = format!("{}:{}", scenario.name, kind);
    let mut warm: Option<QpSolution> = None;
    let mut q_nominal: Option<DVector<f64>> = None;
    let mut failure = None;

    for k in 0..steps_total {
        let t = k as f64 * dt;
        let sp_idx = scenario.active_at(t);
        let step = match mpc_step(model, x.as_slice(), &setpoints[sp_idx], cfg, warm.as_ref()) {
            Ok(s) => s,
            Err(e) => {
                let err = Error::Controller {
                    step: k,
                    source: Box::new(e),
                };
                log::error!("{kind}: {err}");
                failure = Some(err.to_string());
                break;
            }
        };
        let error = match &q_nominal {
            Some(qn) => &step.q_current - qn,
            None => DVector::zeros(model.order()),
        };
        let (u, saturated) = match gain {
            Some(g) => robust_action(&step.u_seq[0], &error, g, &model.input_scaling, &cfg.u_min, &cfg.u_max),
            None => clamp_input(step.first_input_raw(model), &cfg.u_min, &cfg.u_max),
        };
        let u = PlantInput::from_slice(&u)?;
        let w = disturbances.draw();
        let outcome = match integrator.step(&x, &u, &w, dt, plant) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(format!("plant step {k}: {e}"));
                break;
            }
        };
        if outcome.clamped {
            meta.clamp_events.push(k + 1);
        }
        logs.push(StepLog {
            t,
            setpoint: sp_idx,
            q_nominal: step.q_next.clone(),
            error,
            saturated,
            solve_time: step.elapsed,
            iterations: step.solution.iterations,
            kkt_residual: step.solution.kkt_residual,
        });
        warm = Some(shift_solution(&step.solution, model.input_dim()));
        q_nominal = Some(step.q_next);
        inputs.push(u);
        x = outcome.state;
        states.push(x);
    }

    Ok(ClosedLoopResult {
        kind,
        scenario: scenario.clone(),
        trajectory: TrajectoryDataset::new(states, inputs, meta)?,
        steps: logs,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::benchmark;

    fn scenario_with(setpoints: Vec<SetPointChange>) -> Scenario {
        Scenario {
            name: "t".into(),
            x0: benchmark::X0,
            horizon: 6.0,
            setpoints,
            disturbance: DisturbanceSpec::none(),
            disturbance_seed: 0,
        }
    }

    #[test]
    fn set_point_schedule_lookup() {
        let s = scenario_with(vec![
            SetPointChange { time: 0.0, x_s: benchmark::X_S1, u_s: benchmark::U_S1 },
            SetPointChange { time: 3.0, x_s: benchmark::X_S2, u_s: benchmark::U_S2 },
        ]);
        assert_eq!(s.active_at(0.0), 0);
        assert_eq!(s.active_at(2.975), 0);
        assert_eq!(s.active_at(3.0), 1);
        assert_eq!(s.judged_at(3.0), 0);
        assert_eq!(s.judged_at(3.025), 1);
    }

    #[test]
    fn schedule_must_start_at_zero() {
        let s = scenario_with(vec![SetPointChange { time: 1.0, x_s: benchmark::X_S1, u_s: benchmark::U_S1 }]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn kind_round_trips_through_label() {
        for k in ControllerKind::ALL {
            assert_eq!(k.label().parse::<ControllerKind>().unwrap(), k);
        }
        assert!("mpc".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn shift_repeats_last_block() {
        let sol = QpSolution {
            z: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            duals: crate::qp::Duals::zeros(4, 1),
            objective: 0.0,
            status: crate::qp::QpStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 3,
            solve_time: 0.0,
        };
        assert_eq!(shift_solution(&sol, 2).z.as_slice(), &[3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn case_windows_partition() {
        let w = CaseWindow::single_setpoint();
        assert_eq!((w[0].start, w[1].end), (w[2].start, w[2].end));
        assert_eq!(w[0].end, w[1].start);
        let w = CaseWindow::setpoint_change();
        assert_eq!(w[0].end, w[1].start);
    }
}
