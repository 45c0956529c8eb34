use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Disturbance, PlantInput, INPUT_DIM};
use crate::error::{Error, Result};

fn steps_in(duration: f64, dt: f64, what: &str) -> Result<usize> {
    if !(dt > 0.0 && duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what} ({duration}) and dt ({dt}) must be positive"
        )));
    }
    let ratio = duration / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "{what} ({duration} h) is not a positive multiple of dt ({dt} h)"
        )));
    }
    Ok(n as usize)
}

/// Piecewise-constant random inputs: every `hold` hours each channel jumps
/// to a fresh uniform draw in `[lower, upper]`.
pub fn generate_excitation(
    lower: &PlantInput,
    upper: &PlantInput,
    hold: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<PlantInput>> {
    for i in 0..INPUT_DIM {
        if !(lower.0[i] < upper.0[i]) {
            return Err(Error::InvalidArgument(format!(
                "input {i}: lower bound {} must be below upper bound {}",
                lower.0[i], upper.0[i]
            )));
        }
    }
    let hold_steps = steps_in(hold, dt, "hold")?;
    let total = steps_in(horizon, dt, "horizon")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total);
    let mut level = PlantInput([0.0; INPUT_DIM]);
    for k in 0..total {
        if k % hold_steps == 0 {
            for i in 0..INPUT_DIM {
                level.0[i] = rng.random_range(lower.0[i]..=upper.0[i]);
            }
        }
        out.push(level);
    }
    Ok(out)
}

/// Gaussian draws clipped to a symmetric bound, per channel group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub sigma_conc: f64,
    pub bound_conc: f64,
    pub sigma_temp: f64,
    pub bound_temp: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            sigma_conc: 1.0,
            bound_conc: super::benchmark::CONC_DISTURBANCE_BOUND,
            sigma_temp: 10.0,
            bound_temp: super::benchmark::TEMP_DISTURBANCE_BOUND,
        }
    }
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self {
            sigma_conc: 0.0,
            bound_conc: 0.0,
            sigma_temp: 0.0,
            bound_temp: 0.0,
        }
    }
}

pub struct DisturbanceGenerator {
    spec: DisturbanceSpec,
    conc: Normal<f64>,
    temp: Normal<f64>,
    rng: ChaCha8Rng,
}

impl DisturbanceGenerator {
    pub fn new(spec: DisturbanceSpec, seed: u64) -> Result<Self> {
        let normal = |s: f64| {
            Normal::new(0.0, s)
                .map_err(|e| Error::InvalidArgument(format!("disturbance sigma {s}: {e}")))
        };
        if spec.bound_conc < 0.0 || spec.bound_temp < 0.0 {
            return Err(Error::InvalidArgument(
                "disturbance bounds must be non-negative".into(),
            ));
        }
        Ok(Self {
            conc: normal(spec.sigma_conc)?,
            temp: normal(spec.sigma_temp)?,
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Unclipped draw.
    pub fn draw_raw(&mut self) -> Disturbance {
        let mut w = Disturbance::zero();
        for c in w.conc.iter_mut() {
            *c = self.conc.sample(&mut self.rng);
        }
        for t in w.temp.iter_mut() {
            *t = self.temp.sample(&mut self.rng);
        }
        w
    }

    pub fn draw(&mut self) -> Disturbance {
        let mut w = self.draw_raw();
        let (bc, bt) = (self.spec.bound_conc, self.spec.bound_temp);
        w.conc.iter_mut().for_each(|c| *c = c.clamp(-bc, bc));
        w.temp.iter_mut().for_each(|t| *t = t.clamp(-bt, bt));
        w
    }
}

/// One clipped disturbance per sampling interval.
pub fn generate_disturbance(
    spec: DisturbanceSpec,
    length: usize,
    seed: u64,
) -> Result<Vec<Disturbance>> {
    if length == 0 {
        return Err(Error::InvalidArgument(
            "disturbance sequence length must be positive".into(),
        ));
    }
    let mut gen = DisturbanceGenerator::new(spec, seed)?;
    Ok((0..length).map(|_| gen.draw()).collect())
}
