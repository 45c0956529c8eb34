use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{KalmanGsindyConfig, LibraryConfig};
use crate::mpc::{CaseWindow, ControllerKind, MpcConfig, Scenario, SetPointChange};
use crate::plant::{benchmark, find_equilibrium, DisturbanceSpec, PlantInput, PlantParams, PlantState};
use crate::qp::QpSettings;

/// Everything a pipeline run depends on. Relative paths resolve against
/// the directory of the file the config was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Plant parameter file; built-in defaults when absent.
    pub plant_params: Option<PathBuf>,
    pub data: DataConfig,
    pub lifting: LiftingConfig,
    pub model: ModelConfig,
    pub mpc: MpcSettings,
    pub control: ControlConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("runs"),
            plant_params: None,
            data: DataConfig::default(),
            lifting: LiftingConfig::default(),
            model: ModelConfig::default(),
            mpc: MpcSettings::default(),
            control: ControlConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Hours of open-loop excitation.
    pub horizon: f64,
    /// Hours each random input level is held.
    pub hold: f64,
    pub dt: f64,
    pub substeps: usize,
    pub x0: PlantState,
    pub u_min: PlantInput,
    pub u_max: PlantInput,
    pub disturbance: DisturbanceSpec,
    /// Chronological share of samples used for fitting.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            horizon: 40.0,
            hold: 1.5,
            dt: benchmark::SAMPLE_TIME,
            substeps: 10,
            x0: benchmark::X0,
            u_min: benchmark::U_MIN,
            u_max: benchmark::U_MAX,
            disturbance: DisturbanceSpec::default(),
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftingConfig {
    pub library: LibraryConfig,
    pub kalman: KalmanGsindyConfig,
    /// Nonzero replaces `kalman.lambda` by a threshold that keeps exactly
    /// this many functions; 0 uses `kalman.lambda` as given.
    pub select_count: usize,
    /// Min/max normalization of states before lifting.
    pub normalize_states: bool,
    /// Maps the excitation box onto `[0, 1]` before fitting.
    pub normalize_inputs: bool,
}

impl Default for LiftingConfig {
    fn default() -> Self {
        Self {
            library: LibraryConfig::default(),
            kalman: KalmanGsindyConfig::default(),
            select_count: 7,
            normalize_states: true,
            normalize_inputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub order: usize,
    /// Orders tried by `sweep-r`; empty means `1..=N`.
    pub sweep_orders: Vec<usize>,
    /// Rollouts stop once the latent norm exceeds this.
    pub divergence_bound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            order: 8,
            sweep_orders: Vec::new(),
            divergence_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainDesign {
    Lqr,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSettings {
    pub horizon: usize,
    pub q_reduced: Vec<f64>,
    pub q_full: Vec<f64>,
    pub r: Vec<f64>,
    /// Explicit input box; otherwise the excitation box is widened to
    /// contain every scheduled `u_s` with `box_margin` of its width spare.
    pub u_min: Option<PlantInput>,
    pub u_max: Option<PlantInput>,
    pub box_margin: f64,
    /// Fractions in [0, 1], temperatures in `temperature_box`.
    pub state_constraints: bool,
    pub temperature_box: (f64, f64),
    pub gain: GainDesign,
    /// LQR weights for the feedback gain; the MPC weights when absent.
    pub gain_q: Option<Vec<f64>>,
    pub gain_r: Option<Vec<f64>>,
    pub qp: QpSettings,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self {
            horizon: 15,
            q_reduced: vec![37.34, 38.21, 40.44, 49.45, 48.23, 37.22, 38.23, 31.44],
            q_full: vec![
                12.34, 7.21, 8.44, 10.45, 11.23, 9.22, 10.23, 6.44, 8.54, 12.45, 9.32, 13.43, 12.43,
                9.54, 11.32, 8.23,
            ],
            r: vec![2.8, 3.3, 2.6],
            u_min: None,
            u_max: None,
            box_margin: 0.25,
            state_constraints: false,
            temperature_box: (400.0, 560.0),
            gain: GainDesign::Lqr,
            gain_q: None,
            gain_r: None,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Scenario files; the two built-in benchmark scenarios when empty.
    pub scenarios: Vec<PathBuf>,
    /// Overrides the controller list of every scenario.
    pub controllers: Option<Vec<ControllerKind>>,
    /// Overrides the disturbance seeds of every scenario.
    pub seeds: Option<Vec<u64>>,
    /// Replace each set-point state by the plant equilibrium at its `u_s`.
    pub recalibrate_setpoints: bool,
    /// Hours at the start of each run that the timing pass simulates.
    pub timing_window: f64,
    pub timing_repeats: usize,
    /// Worker threads for independent runs; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            scenarios: Vec::new(),
            controllers: None,
            seeds: None,
            recalibrate_setpoints: true,
            timing_window: 1.5,
            timing_repeats: 3,
            threads: 0,
        }
    }
}

/// A scenario plus the runs to make with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub scenario: Scenario,
    /// Disturbance seeds; `[disturbance_seed]` when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// All three controllers when empty.
    #[serde(default)]
    pub controllers: Vec<ControllerKind>,
    /// Evaluation windows; chosen from the number of set-points when empty.
    #[serde(default)]
    pub windows: Vec<CaseWindow>,
}

impl ScenarioFile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: Self = toml::from_str(s)?;
        f.scenario.validate()?;
        Ok(f)
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.scenario.disturbance_seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn controllers(&self) -> Vec<ControllerKind> {
        if self.controllers.is_empty() {
            ControllerKind::ALL.to_vec()
        } else {
            self.controllers.clone()
        }
    }

    pub fn windows(&self) -> Vec<CaseWindow> {
        if !self.windows.is_empty() {
            self.windows.clone()
        } else if self.scenario.setpoints.len() > 1 {
            CaseWindow::setpoint_change()
        } else {
            CaseWindow::single_setpoint()
        }
    }
}

/// Single set-point tracking from the excitation start state, 4 h, no
/// plant disturbance.
pub fn builtin_single() -> ScenarioFile {
    ScenarioFile {
        scenario: Scenario {
            name: "single".into(),
            x0: benchmark::X0,
            horizon: 4.0,
            setpoints: vec![SetPointChange {
                time: 0.0,
                x_s: benchmark::X_S1,
                u_s: benchmark::U_S1,
            }],
            disturbance: DisturbanceSpec::none(),
            disturbance_seed: 0,
        },
        seeds: Vec::new(),
        controllers: Vec::new(),
        windows: Vec::new(),
    }
}

/// Switch from the first to the second operating point after 3 h, 6 h in
/// total, with bounded plant disturbances over ten seeds.
pub fn builtin_change() -> ScenarioFile {
    ScenarioFile {
        scenario: Scenario {
            name: "change".into(),
            x0: benchmark::X0,
            horizon: 6.0,
            setpoints: vec![
                SetPointChange {
                    time: 0.0,
                    x_s: benchmark::X_S1,
                    u_s: benchmark::U_S1,
                },
                SetPointChange {
                    time: 3.0,
                    x_s: benchmark::X_S2,
                    u_s: benchmark::U_S2,
                },
            ],
            disturbance: DisturbanceSpec::default(),
            disturbance_seed: 0,
        },
        seeds: (0..10).collect(),
        controllers: Vec::new(),
        windows: Vec::new(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.horizon > 0.0 && d.hold > 0.0 && d.dt > 0.0) || d.substeps == 0 {
            return Err(Error::Config("data horizon, hold, dt and substeps must be positive".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie in (0, 1)",
                d.train_fraction
            )));
        }
        self.lifting.kalman.validate()?;
        if self.model.order == 0 {
            return Err(Error::Config("model order must be positive".into()));
        }
        let m = &self.mpc;
        if m.horizon == 0 {
            return Err(Error::Config("MPC horizon must be positive".into()));
        }
        if m.r.len() != crate::plant::INPUT_DIM {
            return Err(Error::Config(format!("mpc.r needs {} entries", crate::plant::INPUT_DIM)));
        }
        if !(m.box_margin >= 0.0) {
            return Err(Error::Config("box_margin must be nonnegative".into()));
        }
        if !(self.control.timing_window > 0.0) || self.control.timing_repeats == 0 {
            return Err(Error::Config("timing window and repeats must be positive".into()));
        }
        m.qp.validate()
    }

    pub fn plant(&self) -> Result<PlantParams> {
        match &self.plant_params {
            None => Ok(PlantParams::default()),
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                PlantParams::from_toml_str(&text)
            }
        }
    }

    pub fn load_scenarios(&self) -> Result<Vec<ScenarioFile>> {
        if self.control.scenarios.is_empty() {
            return Ok(vec![builtin_single(), builtin_change()]);
        }
        self.control
            .scenarios
            .iter()
            .map(|p| load_scenario(&self.resolve(p)))
            .collect()
    }

    /// Physical MPC input box: the excitation bounds widened so that every
    /// scheduled steady input keeps `box_margin` times the excitation width
    /// of room on both sides. Explicit `mpc.u_min`/`mpc.u_max` are used as is.
    pub fn input_box(&self, setpoint_inputs: &[PlantInput]) -> (Vec<f64>, Vec<f64>) {
        let (lo0, hi0) = (self.data.u_min.0, self.data.u_max.0);
        let mut lo = self.mpc.u_min.map(|u| u.0).unwrap_or(lo0);
        let mut hi = self.mpc.u_max.map(|u| u.0).unwrap_or(hi0);
        for i in 0..crate::plant::INPUT_DIM {
            let spare = self.mpc.box_margin * (hi0[i] - lo0[i]);
            for us in setpoint_inputs {
                if self.mpc.u_min.is_none() && us.0[i] - spare < lo[i] {
                    lo[i] = us.0[i] - spare;
                }
                if self.mpc.u_max.is_none() && us.0[i] + spare > hi[i] {
                    hi[i] = us.0[i] + spare;
                }
            }
        }
        (lo.to_vec(), hi.to_vec())
    }

    /// Controller settings for a model of order `r` (full or reduced).
    pub fn mpc_config(&self, kind: ControllerKind, u_box: (Vec<f64>, Vec<f64>)) -> MpcConfig {
        let q = match kind {
            ControllerKind::FullKmpc => &self.mpc.q_full,
            _ => &self.mpc.q_reduced,
        };
        let mut cfg = MpcConfig::diagonal(self.mpc.horizon, q, &self.mpc.r, u_box.0, u_box.1, self.data.dt);
        cfg.qp = self.mpc.qp.clone();
        if self.mpc.state_constraints {
            let (tlo, thi) = self.mpc.temperature_box;
            let mut lo = vec![0.0; crate::plant::STATE_DIM];
            let mut hi = vec![1.0; crate::plant::STATE_DIM];
            for &i in &crate::plant::TEMPERATURE_INDICES {
                lo[i] = tlo;
                hi[i] = thi;
            }
            cfg.state_box = Some((lo, hi));
        }
        cfg
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    ScenarioFile::from_toml_str(&text)
}

/// Replaces each set-point state by the equilibrium reached at its `u_s`.
pub fn recalibrate_scenario(s: &Scenario, plant: &PlantParams) -> Result<Scenario> {
    let mut out = s.clone();
    for sp in &mut out.setpoints {
        sp.x_s = find_equilibrium(&sp.u_s, &sp.x_s, plant)?;
    }
    Ok(out)
}
