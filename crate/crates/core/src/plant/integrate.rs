use serde::{Deserialize, Serialize};

use super::{
    derivative, DatasetMeta, Disturbance, PlantInput, PlantParams, PlantState, TrajectoryDataset,
    STATE_DIM,
};
use crate::error::{Error, Result};

/// One classical Runge-Kutta step of `dx/dt = f(x)`.
pub fn rk4_step<const N: usize, F>(mut f: F, x: &[f64; N], dt: f64) -> Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
{
    let axpy = |a: &[f64; N], h: f64, k: &[f64; N]| -> [f64; N] {
        let mut out = *a;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = f(x)?;
    let k2 = f(&axpy(x, 0.5 * dt, &k1))?;
    let k3 = f(&axpy(x, 0.5 * dt, &k2))?;
    let k4 = f(&axpy(x, dt, &k3))?;
    let mut out = *x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PlantState,
    /// True if fractions had to be projected back into the simplex.
    pub clamped: bool,
}

/// Fixed-step RK4 with `substeps` equal sub-steps per call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub substeps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self { substeps: 10 }
    }
}

impl Integrator {
    /// Advances the plant by `dt` hours with `u` and `w` held constant.
    pub fn step(
        &self,
        x: &PlantState,
        u: &PlantInput,
        w: &Disturbance,
        dt: f64,
        p: &PlantParams,
    ) -> Result<StepOutcome> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("step length {dt} must be >= 0")));
        }
        let n = self.substeps.max(1);
        let h = dt / n as f64;
        let mut state = *x;
        let mut clamped = false;
        for sub in 0..n {
            let next = rk4_step::<STATE_DIM, _>(
                |s| derivative(&PlantState(*s), u, w, p),
                &state.0,
                h,
            )?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: sub });
            }
            state = PlantState(next);
            clamped |= state.clamp_fractions();
        }
        Ok(StepOutcome { state, clamped })
    }
}

/// Runs the plant over `inputs`, recording the state every `dt`.
/// `disturbances` must be empty (no disturbance) or as long as `inputs`.
pub fn simulate_open_loop(
    x0: &PlantState,
    inputs: &[PlantInput],
    disturbances: &[Disturbance],
    p: &PlantParams,
    integrator: &Integrator,
    dt: f64,
) -> Result<TrajectoryDataset> {
    if !disturbances.is_empty() && disturbances.len() != inputs.len() {
        return Err(Error::dim(
            "open-loop disturbance sequence",
            inputs.len(),
            disturbances.len(),
        ));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    let mut meta = DatasetMeta::new(dt);
    let zero = Disturbance::zero();
    let mut x = *x0;
    for (k, u) in inputs.iter().enumerate() {
        let w = disturbances.get(k).unwrap_or(&zero);
        let out = integrator.step(&x, u, w, dt, p).map_err(|e| match e {
            Error::NonFiniteState { .. } => Error::NonFiniteState { step: k },
            other => other,
        })?;
        if out.clamped {
            meta.clamp_events.push(k + 1);
        }
        x = out.state;
        states.push(x);
    }
    TrajectoryDataset::new(states, inputs.to_vec(), meta)
}
