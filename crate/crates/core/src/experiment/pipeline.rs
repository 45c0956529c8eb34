use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{recalibrate_scenario, ExperimentConfig, GainDesign, ScenarioFile};
use crate::error::{Error, Result};
use crate::koopman::{
    fit_full, fit_reduced, predict_rollout, prediction_rmse, FullKoopmanModel,
    ReducedKoopmanModel, Snapshots,
};
use crate::lifting::{
    lambda_for_count, lambda_interval_for, run_kalman_gsindy, select_functions, selected_indices,
    FunctionLibrary, LiftingMap,
};
use crate::mpc::{
    design_feedback_gain, run_closed_loop, scaled_rmse, CaseWindow, ClosedLoopResult,
    ControllerKind, RobustGain, Scenario,
};
use crate::plant::{
    benchmark, calibrate, generate_disturbance, generate_excitation, simulate_open_loop,
    CalibrationReport, Integrator, PlantInput, PlantParams, TrajectoryDataset, INPUT_NAMES,
    STATE_DIM, STATE_NAMES,
};
use crate::scaling::AffineScaling;

const CALIBRATION_RESIDUAL_TOL: f64 = 1e-6;
const CALIBRATION_OFFSET_TOL: f64 = 0.05;

/// Directory layout under `out_dir`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn identify(&self) -> PathBuf {
        self.root.join("identify")
    }

    pub fn control(&self) -> PathBuf {
        self.root.join("control")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn run_dir(&self, scenario: &str, kind: ControllerKind, seed: u64) -> PathBuf {
        self.control()
            .join(scenario)
            .join(kind.label())
            .join(format!("seed-{seed}"))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_effective_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn operating_points() -> [(&'static str, crate::plant::PlantState, PlantInput); 2] {
    [
        ("x_s1", benchmark::X_S1, benchmark::U_S1),
        ("x_s2", benchmark::X_S2, benchmark::U_S2),
    ]
}

/// Open-loop excitation run plus the operating-point calibration check.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<TrajectoryDataset> {
    let layout = Layout::new(&cfg.out_dir);
    let plant = cfg.plant()?;
    let d = &cfg.data;
    let calibration = calibrate(
        &plant,
        &operating_points(),
        CALIBRATION_RESIDUAL_TOL,
        CALIBRATION_OFFSET_TOL,
    )?;
    if !calibration.accepted() {
        log::warn!("operating points are not equilibria of the shipped parameters");
    }
    let inputs = generate_excitation(&d.u_min, &d.u_max, d.hold, d.horizon, d.dt, cfg.seed)?;
    let disturbances = generate_disturbance(d.disturbance, inputs.len(), cfg.seed.wrapping_add(1))?;
    let integrator = Integrator {
        substeps: d.substeps,
    };
    let mut ds = simulate_open_loop(&d.x0, &inputs, &disturbances, &plant, &integrator, d.dt)?;
    ds.meta.seed = Some(cfg.seed);
    ds.meta.scenario = "open-loop excitation".into();
    if !ds.meta.clamp_events.is_empty() {
        log::warn!("fraction guard clamped {} samples", ds.meta.clamp_events.len());
    }
    let dir = layout.data();
    ds.save(&dir, "dataset")?;
    write_json(
        &dir.join("calibration.json"),
        &CalibrationFile {
            seed: cfg.seed,
            report: calibration,
        },
    )?;
    write_effective_config(cfg, &dir)?;
    log::info!("wrote {} samples to {}", ds.len(), dir.display());
    Ok(ds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationFile {
    seed: u64,
    #[serde(flatten)]
    report: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub order: usize,
    pub spectral_radius: f64,
    pub fit_residual: f64,
    pub rank: usize,
    pub validation_rmse: f64,
    pub validation_rmse_per_state: Vec<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub seed: u64,
    pub training_samples: usize,
    pub validation_samples: usize,
    /// Candidate functions in the library; 0 for the identity lifting.
    pub library_size: usize,
    pub lambda: Option<f64>,
    /// Thresholds that select the same rows.
    pub lambda_interval: Option<(f64, f64)>,
    pub selected_functions: Vec<String>,
    pub lifted_dim: usize,
    /// POD eigenvalues of the lifted training snapshots, descending.
    pub pod_eigenvalues: Vec<f64>,
    pub retained_energy: f64,
    pub full: ModelSummary,
    pub reduced: ModelSummary,
}

fn load_dataset(layout: &Layout) -> Result<TrajectoryDataset> {
    TrajectoryDataset::load(&layout.data(), "dataset")
        .map_err(|e| Error::Config(format!("no dataset under {}: {e}", layout.data().display())))
}

/// Lifting, library size, threshold used and its admissible interval.
type LiftingChoice = (LiftingMap, usize, Option<f64>, Option<(f64, f64)>);

fn build_lifting(
    cfg: &ExperimentConfig,
    train: &TrajectoryDataset,
    normalizer: AffineScaling,
) -> Result<LiftingChoice> {
    let lc = &cfg.lifting;
    if lc.library.families.is_empty() {
        return Ok((LiftingMap::identity(normalizer), 0, None, None));
    }
    let samples: Vec<Vec<f64>> = train
        .states
        .iter()
        .map(|s| normalizer.apply(s.as_slice()))
        .collect();
    let library = FunctionLibrary::build(&lc.library, STATE_DIM, &samples)?;
    let est = run_kalman_gsindy(train, &library, &normalizer, &lc.kalman)?;
    let lambda = match lc.select_count {
        0 => lc.kalman.lambda,
        count => lambda_for_count(&est, count)?,
    };
    let lifting = select_functions(&est, lambda, &library, normalizer)?;
    let interval = lambda_interval_for(&est, &selected_indices(&est, lambda));
    Ok((lifting, library.len(), Some(lambda), interval))
}

fn validate_model(
    model: &ReducedKoopmanModel,
    val: &TrajectoryDataset,
    scaling: &AffineScaling,
    bound: f64,
) -> Result<(ModelSummary, Vec<Vec<f64>>)> {
    let roll = predict_rollout(model, val.states[0].as_slice(), &val.inputs, bound)?;
    let predicted: Vec<Vec<f64>> = roll.states.iter().map(|v| v.as_slice().to_vec()).collect();
    let rmse = prediction_rmse(&predicted, &val.states[..predicted.len()], scaling)?;
    let summary = ModelSummary {
        order: model.order(),
        spectral_radius: model.diagnostics.spectral_radius,
        fit_residual: model.diagnostics.residual,
        rank: model.diagnostics.rank,
        validation_rmse: rmse.aggregate,
        validation_rmse_per_state: rmse.per_state,
        diverged: roll.diverged,
    };
    Ok((summary, predicted))
}

fn rmse_scaling(train: &TrajectoryDataset) -> Result<AffineScaling> {
    AffineScaling::from_samples(STATE_DIM, train.states.iter().map(|s| s.as_slice()))
}

fn input_scaling(cfg: &ExperimentConfig) -> Result<AffineScaling> {
    if cfg.lifting.normalize_inputs {
        AffineScaling::from_bounds(cfg.data.u_min.as_slice(), cfg.data.u_max.as_slice())
    } else {
        Ok(AffineScaling::identity(crate::plant::INPUT_DIM))
    }
}

/// Lifting selection, POD and the full and reduced least-squares fits.
pub fn identify(cfg: &ExperimentConfig) -> Result<IdentificationReport> {
    let layout = Layout::new(&cfg.out_dir);
    let ds = load_dataset(&layout)?;
    let (train, val) = ds.split(cfg.data.train_fraction)?;
    let scaling = rmse_scaling(&train)?;
    let normalizer = if cfg.lifting.normalize_states {
        scaling.clone()
    } else {
        AffineScaling::identity(STATE_DIM)
    };
    let (lifting, library_size, lambda, lambda_interval) = build_lifting(cfg, &train, normalizer)?;
    let n_lifted = lifting.lifted_dim();
    log::info!("lifted dimension {n_lifted}: {:?}", lifting.describe());

    let us = input_scaling(cfg)?;
    let snaps = Snapshots::from(&train);
    let full = fit_full(&snaps, &lifting, &us)?;
    let order = cfg.model.order.min(n_lifted);
    if order < cfg.model.order {
        log::warn!("model order {} capped at lifted dimension {n_lifted}", cfg.model.order);
    }
    let reduced = fit_reduced(&snaps, &lifting, &us, order)?;

    let bound = cfg.model.divergence_bound;
    let full_r = full.as_reduced();
    let (full_summary, full_pred) = validate_model(&full_r, &val, &scaling, bound)?;
    let (red_summary, red_pred) = validate_model(&reduced, &val, &scaling, bound)?;

    let eig = reduced.basis.eigvals.clone();
    let total: f64 = eig.iter().sum();
    let retained: f64 = eig.iter().take(order).sum();
    let report = IdentificationReport {
        seed: cfg.seed,
        training_samples: train.len(),
        validation_samples: val.len(),
        library_size,
        lambda,
        lambda_interval,
        selected_functions: lifting.describe(),
        lifted_dim: n_lifted,
        pod_eigenvalues: eig.clone(),
        retained_energy: if total > 0.0 { retained / total } else { 1.0 },
        full: full_summary,
        reduced: red_summary,
    };

    let dir = layout.identify();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("lifting.json"), lifting.to_json()?)?;
    fs::write(dir.join("full_model.json"), full.to_json()?)?;
    fs::write(dir.join("reduced_model.json"), reduced.to_json()?)?;
    write_json(&dir.join("state_scaling.json"), &scaling)?;
    write_json(&dir.join("identification.json"), &report)?;
    write_effective_config(cfg, &dir)?;

    let mut w = csv_writer(&dir.join("eigvals.csv"))?;
    w.write_record(["index", "eigenvalue", "energy_fraction", "cumulative_fraction"])?;
    let mut cum = 0.0;
    for (i, e) in eig.iter().enumerate() {
        cum += e;
        let frac = |v: f64| if total > 0.0 { v / total } else { 0.0 };
        w.write_record([
            (i + 1).to_string(),
            e.to_string(),
            frac(*e).to_string(),
            frac(cum).to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("validation.csv"))?;
    let mut header = vec!["t".to_string()];
    for tag in ["true", "full", "reduced"] {
        header.extend(STATE_NAMES.iter().map(|s| format!("{s}_{tag}")));
    }
    w.write_record(&header)?;
    let rows = full_pred.len().min(red_pred.len());
    for k in 0..rows {
        let mut row = vec![val.time(k).to_string()];
        row.extend(val.states[k].0.iter().map(|v| v.to_string()));
        row.extend(full_pred[k].iter().map(|v| v.to_string()));
        row.extend(red_pred[k].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(report)
}

/// Validation error and stability of reduced models across orders.
pub fn sweep_r(cfg: &ExperimentConfig) -> Result<Vec<(usize, ModelSummary, f64)>> {
    let layout = Layout::new(&cfg.out_dir);
    let lifting_path = layout.identify().join("lifting.json");
    let lifting = LiftingMap::from_json(
        &fs::read_to_string(&lifting_path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", lifting_path.display())))?,
    )?;
    let ds = load_dataset(&layout)?;
    let (train, val) = ds.split(cfg.data.train_fraction)?;
    let scaling = rmse_scaling(&train)?;
    let us = input_scaling(cfg)?;
    let snaps = Snapshots::from(&train);
    let n_lifted = lifting.lifted_dim();
    let orders: Vec<usize> = if cfg.model.sweep_orders.is_empty() {
        (1..=n_lifted).collect()
    } else {
        cfg.model.sweep_orders.clone()
    };
    let mut rows = Vec::with_capacity(orders.len());
    for r in orders {
        if r == 0 || r > n_lifted {
            return Err(Error::Config(format!("sweep order {r} outside 1..={n_lifted}")));
        }
        let model = fit_reduced(&snaps, &lifting, &us, r)?;
        let (summary, _) = validate_model(&model, &val, &scaling, cfg.model.divergence_bound)?;
        rows.push((r, summary, model.basis.tail_energy()));
    }
    let dir = layout.sweep();
    let mut w = csv_writer(&dir.join("sweep_r.csv"))?;
    w.write_record(["r", "validation_rmse", "spectral_radius", "tail_energy", "diverged"])?;
    for (r, s, tail) in &rows {
        w.write_record([
            r.to_string(),
            s.validation_rmse.to_string(),
            s.spectral_radius.to_string(),
            tail.to_string(),
            s.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    write_effective_config(cfg, &dir)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRmse {
    pub label: String,
    pub start: f64,
    pub end: f64,
    /// Absent when the run ended before the window did.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub windows: Vec<WindowRmse>,
    pub steps: usize,
    pub saturation_count: usize,
    pub failure: Option<String>,
    /// Seconds per step, condensing plus QP solve, over the first
    /// `timing_window` hours. Measured while other runs may share the CPU.
    pub mean_step_time: Option<f64>,
    pub p95_step_time: Option<f64>,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub controller: ControllerKind,
    pub scenario: String,
    pub seed: u64,
    pub order: usize,
    pub steps: usize,
    pub repeats: usize,
    /// Mean over repeats of the per-step mean.
    pub mean_step_time: f64,
    pub min_repeat_mean: f64,
    pub max_repeat_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub seed: u64,
    pub window: f64,
    pub entries: Vec<TimingEntry>,
    /// Reduced nominal over full mean step time.
    pub ratio: Option<f64>,
    pub reference_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ControlOutcome {
    pub summaries: Vec<RunSummary>,
    pub timing: TimingReport,
    pub gain: RobustGain,
    pub results: Vec<ClosedLoopResult>,
}

struct ControlContext {
    plant: PlantParams,
    integrator: Integrator,
    full: ReducedKoopmanModel,
    reduced: ReducedKoopmanModel,
    gain: RobustGain,
}

impl ControlContext {
    fn model(&self, kind: ControllerKind) -> &ReducedKoopmanModel {
        match kind {
            ControllerKind::FullKmpc => &self.full,
            _ => &self.reduced,
        }
    }

    fn run(
        &self,
        cfg: &ExperimentConfig,
        kind: ControllerKind,
        scenario: &Scenario,
        dump_dir: Option<PathBuf>,
    ) -> Result<ClosedLoopResult> {
        let inputs: Vec<PlantInput> = scenario.setpoints.iter().map(|s| s.u_s).collect();
        let mut mpc = cfg.mpc_config(kind, cfg.input_box(&inputs));
        mpc.dt = cfg.data.dt;
        mpc.dump_dir = dump_dir;
        run_closed_loop(
            &self.plant,
            &self.integrator,
            self.model(kind),
            kind,
            &mpc,
            Some(&self.gain),
            scenario,
        )
    }
}

fn design_gain(cfg: &ExperimentConfig, reduced: &ReducedKoopmanModel) -> Result<RobustGain> {
    match cfg.mpc.gain {
        GainDesign::Zero => RobustGain::zero(&reduced.a, reduced.input_dim()),
        GainDesign::Lqr => {
            let diag = |v: &[f64], n: usize, what: &str| -> Result<nalgebra::DMatrix<f64>> {
                if v.len() != n {
                    return Err(Error::Config(format!("{what} needs {n} entries, got {}", v.len())));
                }
                Ok(nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)))
            };
            let q = diag(
                cfg.mpc.gain_q.as_deref().unwrap_or(&cfg.mpc.q_reduced),
                reduced.order(),
                "gain state weight",
            )?;
            let r = diag(
                cfg.mpc.gain_r.as_deref().unwrap_or(&cfg.mpc.r),
                reduced.input_dim(),
                "gain input weight",
            )?;
            design_feedback_gain(&reduced.a, &reduced.b, &q, &r)
        }
    }
}

fn load_models(layout: &Layout) -> Result<(FullKoopmanModel, ReducedKoopmanModel)> {
    let dir = layout.identify();
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
    };
    Ok((
        FullKoopmanModel::from_json(&read("full_model.json")?)?,
        ReducedKoopmanModel::from_json(&read("reduced_model.json")?)?,
    ))
}

fn summarize(
    run_id: String,
    result: &ClosedLoopResult,
    windows: &[CaseWindow],
    scaling: &AffineScaling,
    timing_window: f64,
) -> RunSummary {
    let end = result.trajectory.time(result.trajectory.len() - 1);
    let windows = windows
        .iter()
        .map(|w| WindowRmse {
            label: w.label.clone(),
            start: w.start,
            end: w.end,
            rmse: if end + 1e-9 >= w.end {
                scaled_rmse(result, w, scaling).ok()
            } else {
                None
            },
        })
        .collect();
    let iters: usize = result.steps.iter().map(|s| s.iterations).sum();
    RunSummary {
        run_id,
        scenario: result.scenario.name.clone(),
        controller: result.kind,
        seed: result.scenario.disturbance_seed,
        windows,
        steps: result.steps.len(),
        saturation_count: result.saturation_count(),
        failure: result.failure.clone(),
        mean_step_time: result.mean_solve_time(0.0, timing_window),
        p95_step_time: result.solve_time_quantile(0.95),
        mean_iterations: if result.steps.is_empty() {
            0.0
        } else {
            iters as f64 / result.steps.len() as f64
        },
    }
}

fn write_run(dir: &Path, result: &ClosedLoopResult, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let traj = &result.trajectory;
    let mut w = csv_writer(&dir.join("trajectory.csv"))?;
    let mut header = vec!["t".to_string()];
    header.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    header.extend(INPUT_NAMES.iter().map(|s| s.to_string()));
    header.push("setpoint".into());
    header.push("saturated".into());
    w.write_record(&header)?;
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![traj.time(k).to_string()];
        row.extend(x.0.iter().map(|v| v.to_string()));
        match (traj.inputs.get(k), result.steps.get(k)) {
            (Some(u), Some(s)) => {
                row.extend(u.0.iter().map(|v| v.to_string()));
                row.push(s.setpoint.to_string());
                row.push(u8::from(s.saturated).to_string());
            }
            _ => row.extend(std::iter::repeat_n(String::new(), INPUT_NAMES.len() + 2)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("steps.csv"))?;
    w.write_record(["t", "setpoint", "saturated", "iterations", "kkt_residual", "error_norm"])?;
    for s in &result.steps {
        w.write_record([
            s.t.to_string(),
            s.setpoint.to_string(),
            u8::from(s.saturated).to_string(),
            s.iterations.to_string(),
            s.kkt_residual.to_string(),
            s.error.norm().to_string(),
        ])?;
    }
    w.flush()?;

    // wall-clock figures live in JSON so every CSV stays reproducible
    let times: Vec<f64> = result.steps.iter().map(|s| s.solve_time).collect();
    write_json(&dir.join("timing.json"), &times)?;
    write_json(&dir.join("summary.json"), summary)
}

/// Runs every (scenario, seed, controller) job, then a sequential timing
/// pass over the first seed of the first scenario.
pub fn control(cfg: &ExperimentConfig) -> Result<ControlOutcome> {
    let layout = Layout::new(&cfg.out_dir);
    let plant = cfg.plant()?;
    let (full, reduced) = load_models(&layout)?;
    let scaling: AffineScaling = read_json(&layout.identify().join("state_scaling.json"))?;
    let gain = design_gain(cfg, &reduced)?;
    log::info!("feedback gain spectral radius {:.4}", gain.spectral_radius);
    let ctx = ControlContext {
        plant,
        integrator: Integrator {
            substeps: cfg.data.substeps,
        },
        full: full.as_reduced(),
        reduced,
        gain,
    };

    let mut files: Vec<ScenarioFile> = cfg.load_scenarios()?;
    if cfg.control.recalibrate_setpoints {
        for f in &mut files {
            f.scenario = recalibrate_scenario(&f.scenario, &ctx.plant)?;
        }
    }
    let mut names: Vec<&str> = files.iter().map(|f| f.scenario.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("scenario names must be unique".into()));
    }

    struct Job<'a> {
        file: &'a ScenarioFile,
        scenario: Scenario,
        kind: ControllerKind,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for f in &files {
        let seeds = cfg.control.seeds.clone().unwrap_or_else(|| f.seeds());
        let kinds = cfg.control.controllers.clone().unwrap_or_else(|| f.controllers());
        for &seed in &seeds {
            for &kind in &kinds {
                let mut scenario = f.scenario.clone();
                scenario.disturbance_seed = seed;
                jobs.push(Job {
                    file: f,
                    scenario,
                    kind,
                    seed,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.control.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<ClosedLoopResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let dir = layout.run_dir(&j.scenario.name, j.kind, j.seed);
                ctx.run(cfg, j.kind, &j.scenario, Some(dir))
            })
            .collect()
    });

    let mut summaries = Vec::with_capacity(jobs.len());
    let mut kept = Vec::with_capacity(jobs.len());
    for (job, res) in jobs.iter().zip(results) {
        let result = res?;
        let dir = layout.run_dir(&job.scenario.name, job.kind, job.seed);
        let run_id = format!("{}/{}/seed-{}", job.scenario.name, job.kind.label(), job.seed);
        let summary = summarize(
            run_id,
            &result,
            &job.file.windows(),
            &scaling,
            cfg.control.timing_window,
        );
        if let Some(f) = &summary.failure {
            log::error!("{}: {f}", summary.run_id);
        }
        write_run(&dir, &result, &summary)?;
        summaries.push(summary);
        kept.push(result);
    }

    let timing = timing_pass(cfg, &ctx, files.first())?;
    write_json(&layout.control().join("timing.json"), &timing)?;
    write_json(&layout.control().join("gain.json"), &ctx.gain)?;
    write_effective_config(cfg, &layout.control())?;
    Ok(ControlOutcome {
        summaries,
        timing,
        gain: ctx.gain.clone(),
        results: kept,
    })
}

/// Runs the transient window of one scenario per MPC variant on the calling
/// thread, after all parallel work has finished.
fn timing_pass(
    cfg: &ExperimentConfig,
    ctx: &ControlContext,
    file: Option<&ScenarioFile>,
) -> Result<TimingReport> {
    let window = cfg.control.timing_window;
    let mut entries = Vec::new();
    if let Some(f) = file {
        let mut scenario = f.scenario.clone();
        scenario.horizon = scenario.horizon.min(window);
        let seed = cfg
            .control
            .seeds
            .as_ref()
            .and_then(|s| s.first().copied())
            .unwrap_or_else(|| f.seeds()[0]);
        scenario.disturbance_seed = seed;
        for kind in [ControllerKind::FullKmpc, ControllerKind::ReducedKmpc] {
            let mut means = Vec::with_capacity(cfg.control.timing_repeats);
            let mut steps = 0;
            for _ in 0..cfg.control.timing_repeats {
                let res = ctx.run(cfg, kind, &scenario, None)?;
                if let Some(f) = &res.failure {
                    return Err(Error::Config(format!("timing run for {kind} failed: {f}")));
                }
                steps = res.steps.len();
                means.push(res.mean_solve_time(0.0, window).unwrap_or(f64::NAN));
            }
            entries.push(TimingEntry {
                controller: kind,
                scenario: scenario.name.clone(),
                seed,
                order: ctx.model(kind).order(),
                steps,
                repeats: means.len(),
                mean_step_time: means.iter().sum::<f64>() / means.len() as f64,
                min_repeat_mean: means.iter().copied().fold(f64::INFINITY, f64::min),
                max_repeat_mean: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    let find = |k: ControllerKind| entries.iter().find(|e| e.controller == k).map(|e| e.mean_step_time);
    let ratio = match (find(ControllerKind::ReducedKmpc), find(ControllerKind::FullKmpc)) {
        (Some(r), Some(f)) if f > 0.0 => Some(r / f),
        _ => None,
    };
    Ok(TimingReport {
        seed: cfg.seed,
        window,
        entries,
        ratio,
        reference_ratio: super::report::REFERENCE_TIMING.0 / super::report::REFERENCE_TIMING.1,
    })
}

/// `generate-data`, `identify`, `control` and `report` in sequence.
pub fn run_all(cfg: &ExperimentConfig) -> Result<super::ReportBundle> {
    generate_data(cfg)?;
    identify(cfg)?;
    control(cfg)?;
    super::report(cfg)
}
