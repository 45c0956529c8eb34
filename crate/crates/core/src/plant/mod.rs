//! Reactor-separator benchmark: two CSTRs in series followed by a flash
//! separator with recycle to the first reactor. Reactions A -> B -> C.

mod calibration;
mod dataset;
mod excitation;
mod integrate;

pub use calibration::{calibrate, find_equilibrium, CalibrationEntry, CalibrationReport};
pub use dataset::{DatasetMeta, TrajectoryDataset};
pub use excitation::{
    generate_disturbance, generate_excitation, DisturbanceGenerator, DisturbanceSpec,
};
pub use integrate::{rk4_step, simulate_open_loop, Integrator, StepOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 9;
pub const INPUT_DIM: usize = 3;

/// State indices that hold mass fractions, in state order.
pub const FRACTION_INDICES: [usize; 6] = [0, 1, 3, 4, 6, 7];
/// State indices that hold temperatures.
pub const TEMPERATURE_INDICES: [usize; 3] = [2, 5, 8];

pub const STATE_NAMES: [&str; STATE_DIM] =
    ["xA1", "xB1", "T1", "xA2", "xB2", "T2", "xA3", "xB3", "T3"];
pub const INPUT_NAMES: [&str; INPUT_DIM] = ["Q1", "Q2", "Q3"];

/// `[xA1, xB1, T1, xA2, xB2, T2, xA3, xB3, T3]`; fractions dimensionless,
/// temperatures in K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState(pub [f64; STATE_DIM]);

impl PlantState {
    pub fn xa(&self, vessel: usize) -> f64 {
        self.0[3 * vessel]
    }

    pub fn xb(&self, vessel: usize) -> f64 {
        self.0[3 * vessel + 1]
    }

    pub fn temperature(&self, vessel: usize) -> f64 {
        self.0[3 * vessel + 2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; STATE_DIM] = v
            .try_into()
            .map_err(|_| Error::dim("plant state", STATE_DIM, v.len()))?;
        Ok(Self(arr))
    }

    /// Checks fraction bounds, closure per vessel and positive temperatures.
    pub fn check_physical(&self) -> Result<()> {
        for vessel in 0..3 {
            let (a, b, t) = (self.xa(vessel), self.xb(vessel), self.temperature(vessel));
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a + b > 1.0 + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "vessel {} fractions out of range: xA={a}, xB={b}",
                    vessel + 1
                )));
            }
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "vessel {} temperature {t} is not positive",
                    vessel + 1
                )));
            }
        }
        Ok(())
    }

    /// Projects fractions back into the simplex. Returns true if anything moved.
    pub fn clamp_fractions(&mut self) -> bool {
        let mut moved = false;
        for vessel in 0..3 {
            let ia = 3 * vessel;
            let ib = ia + 1;
            let a = self.0[ia].clamp(0.0, 1.0);
            let b = self.0[ib].clamp(0.0, 1.0);
            let (a, b) = if a + b > 1.0 {
                let s = a + b;
                (a / s, b / s)
            } else {
                (a, b)
            };
            if a != self.0[ia] || b != self.0[ib] {
                moved = true;
                self.0[ia] = a;
                self.0[ib] = b;
            }
        }
        moved
    }
}

impl AsRef<[f64]> for PlantState {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Heat inputs `[Q1, Q2, Q3]` in kJ/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantInput(pub [f64; INPUT_DIM]);

impl PlantInput {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; INPUT_DIM] = v
            .try_into()
            .map_err(|_| Error::dim("plant input", INPUT_DIM, v.len()))?;
        Ok(Self(arr))
    }

    pub fn clamp(&self, lower: &PlantInput, upper: &PlantInput) -> PlantInput {
        PlantInput(std::array::from_fn(|i| self.0[i].clamp(lower.0[i], upper.0[i])))
    }
}

impl AsRef<[f64]> for PlantInput {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Additive process disturbance, held over a sampling interval. `conc` enters
/// the six composition balances (1/h), `temp` the three energy balances (K/h).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub conc: [f64; 6],
    pub temp: [f64; 3],
}

impl Disturbance {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Disturbance laid out in state order.
    pub fn to_state_order(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for (k, &i) in FRACTION_INDICES.iter().enumerate() {
            out[i] = self.conc[k];
        }
        for (k, &i) in TEMPERATURE_INDICES.iter().enumerate() {
            out[i] = self.temp[k];
        }
        out
    }
}

/// Physical constants of the benchmark. Units follow the energy balances as
/// written: heats of reaction per unit mass so that `dH / cp` is in K, and
/// evaporation enthalpies per unit volume of overhead stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Vessel volumes, m^3.
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    /// Feed, recycle and purge flow rates, m^3/h.
    pub f10: f64,
    pub f20: f64,
    pub fr: f64,
    pub fp: f64,
    /// Feed temperatures, K.
    pub t10: f64,
    pub t20: f64,
    /// Feed mass fractions.
    pub xa10: f64,
    pub xb10: f64,
    pub xa20: f64,
    pub xb20: f64,
    /// Pre-exponential factors, 1/h.
    pub k1: f64,
    pub k2: f64,
    /// Activation energies, kJ/kmol.
    pub e1: f64,
    pub e2: f64,
    /// Heats of reaction, kJ/kg.
    pub dh1: f64,
    pub dh2: f64,
    /// Evaporation enthalpies of A, B, C, kJ/m^3.
    pub dh_vap1: f64,
    pub dh_vap2: f64,
    pub dh_vap3: f64,
    /// Relative volatilities.
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub alpha_c: f64,
    /// Heat capacity kJ/(kg K), gas constant kJ/(kmol K), density kg/m^3.
    pub cp: f64,
    pub r_gas: f64,
    pub rho: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            v1: 1.0,
            v2: 0.5,
            v3: 1.0,
            f10: 5.04,
            f20: 5.04,
            fr: 50.4,
            fp: 0.504,
            t10: 300.0,
            t20: 300.0,
            xa10: 1.0,
            xb10: 0.0,
            xa20: 1.0,
            xb20: 0.0,
            k1: 9.972e6,
            k2: 9.0e6,
            e1: 5.0e4,
            e2: 6.0e4,
            dh1: -230.46,
            dh2: -268.87,
            dh_vap1: -66737.0,
            dh_vap2: -29682.0,
            dh_vap3: -76908.0,
            alpha_a: 3.5,
            alpha_b: 1.0,
            alpha_c: 0.5,
            cp: 4.2,
            r_gas: 8.314,
            rho: 1000.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v1", self.v1),
            ("v2", self.v2),
            ("v3", self.v3),
            ("f10", self.f10),
            ("f20", self.f20),
            ("fr", self.fr),
            ("fp", self.fp),
            ("alpha_a", self.alpha_a),
            ("alpha_b", self.alpha_b),
            ("alpha_c", self.alpha_c),
            ("cp", self.cp),
            ("r_gas", self.r_gas),
            ("rho", self.rho),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "plant parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: Self = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// Effluent flows at constant holdup: `F1 = F10 + Fr`, `F2 = F1 + F20`.
    pub fn effluent_flows(&self) -> (f64, f64) {
        let f1 = self.f10 + self.fr;
        (f1, f1 + self.f20)
    }
}

/// Overhead (recycle) composition `(xAr, xBr, xCr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecycleComposition {
    pub xa: f64,
    pub xb: f64,
    pub xc: f64,
}

/// Volatility-weighted overhead composition of the separator.
pub fn recycle_composition(xa3: f64, xb3: f64, p: &PlantParams) -> Result<RecycleComposition> {
    let xc3 = 1.0 - xa3 - xb3;
    let wa = p.alpha_a * xa3;
    let wb = p.alpha_b * xb3;
    let wc = p.alpha_c * xc3;
    let denom = wa + wb + wc;
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::DegenerateRecycle(denom));
    }
    Ok(RecycleComposition {
        xa: wa / denom,
        xb: wb / denom,
        xc: wc / denom,
    })
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteDerivative { term })
    }
}

/// Right-hand side of the nine mass and energy balances, with `w` added
/// term-by-term.
pub fn derivative(
    x: &PlantState,
    u: &PlantInput,
    w: &Disturbance,
    p: &PlantParams,
) -> Result<[f64; STATE_DIM]> {
    let [xa1, xb1, t1, xa2, xb2, t2, xa3, xb3, t3] = x.0;
    let [q1, q2, q3] = u.0;
    let rec = recycle_composition(xa3, xb3, p)?;
    let (f1, f2) = p.effluent_flows();

    let arrhenius = |k: f64, e: f64, t: f64| k * (-e / (p.r_gas * t)).exp();
    let r1_1 = finite("k1*exp(-E1/(R*T1))", arrhenius(p.k1, p.e1, t1))? * xa1;
    let r2_1 = finite("k2*exp(-E2/(R*T1))", arrhenius(p.k2, p.e2, t1))? * xb1;
    let r1_2 = finite("k1*exp(-E1/(R*T2))", arrhenius(p.k1, p.e1, t2))? * xa2;
    let r2_2 = finite("k2*exp(-E2/(R*T2))", arrhenius(p.k2, p.e2, t2))? * xb2;
    let out_sep = p.fr + p.fp;
    let rcp = p.rho * p.cp;

    let dxa1 = p.f10 / p.v1 * (p.xa10 - xa1) + p.fr / p.v1 * (rec.xa - xa1) - r1_1;
    let dxb1 = p.f10 / p.v1 * (p.xb10 - xb1) + p.fr / p.v1 * (rec.xb - xb1) + r1_1 - r2_1;
    let dt1 = p.f10 / p.v1 * (p.t10 - t1) + p.fr / p.v1 * (t3 - t1)
        - p.dh1 / p.cp * r1_1
        - p.dh2 / p.cp * r2_1
        + q1 / (rcp * p.v1);
    let dxa2 = f1 / p.v2 * (xa1 - xa2) + p.f20 / p.v2 * (p.xa20 - xa2) - r1_2;
    let dxb2 = f1 / p.v2 * (xb1 - xb2) + p.f20 / p.v2 * (p.xb20 - xb2) + r1_2 - r2_2;
    let dt2 = f1 / p.v2 * (t1 - t2) + p.f20 / p.v2 * (p.t20 - t2)
        - p.dh1 / p.cp * r1_2
        - p.dh2 / p.cp * r2_2
        + q2 / (rcp * p.v2);
    let dxa3 = f2 / p.v3 * (xa2 - xa3) - out_sep / p.v3 * (rec.xa - xa3);
    let dxb3 = f2 / p.v3 * (xb2 - xb3) - out_sep / p.v3 * (rec.xb - xb3);
    let dt3 = f2 / p.v3 * (t2 - t3)
        + q3 / (rcp * p.v3)
        + out_sep / (rcp * p.v3)
            * (rec.xa * p.dh_vap1 + rec.xb * p.dh_vap2 + rec.xc * p.dh_vap3);

    let w = w.to_state_order();
    Ok([
        finite("dxA1/dt", dxa1 + w[0])?,
        finite("dxB1/dt", dxb1 + w[1])?,
        finite("dT1/dt", dt1 + w[2])?,
        finite("dxA2/dt", dxa2 + w[3])?,
        finite("dxB2/dt", dxb2 + w[4])?,
        finite("dT2/dt", dt2 + w[5])?,
        finite("dxA3/dt", dxa3 + w[6])?,
        finite("dxB3/dt", dxb3 + w[7])?,
        finite("dT3/dt", dt3 + w[8])?,
    ])
}

/// Operating points of the benchmark scenario.
pub mod benchmark {
    use super::{PlantInput, PlantState};

    /// Sampling period, h.
    pub const SAMPLE_TIME: f64 = 0.025;

    pub const X0: PlantState = PlantState([
        0.1155, 0.6235, 497.3, 0.1367, 0.6053, 489.8, 0.0396, 0.5504, 491.8,
    ]);
    pub const X_S1: PlantState = PlantState([
        0.1921, 0.6753, 476.8, 0.2117, 0.6561, 468.5, 0.0721, 0.6896, 471.5,
    ]);
    pub const X_S2: PlantState = PlantState([
        0.1336, 0.6475, 491.4, 0.1547, 0.6284, 483.9, 0.0469, 0.5956, 486.0,
    ]);
    pub const U_S1: PlantInput = PlantInput([2.87e6, 1.00e6, 2.87e6]);
    pub const U_S2: PlantInput = PlantInput([2.94e6, 1.14e6, 2.95e6]);
    pub const U_MIN: PlantInput = PlantInput([2.85e6, 0.98e6, 2.85e6]);
    pub const U_MAX: PlantInput = PlantInput([2.976e6, 1.026e6, 2.976e6]);

    /// Composition disturbance clip, 1/h.
    pub const CONC_DISTURBANCE_BOUND: f64 = 0.5;
    /// Temperature disturbance clip, K/h.
    pub const TEMP_DISTURBANCE_BOUND: f64 = 5.0;
}
