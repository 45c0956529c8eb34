//! C ABI over the plant simulator, identified Koopman models and the
//! tracking MPC controller.
//!
//! Every entry point returns a [`RokStatus`]. On failure a message is kept
//! per thread and can be read with [`rok_last_error`]. Handles are opaque and
//! owned by the caller until passed to the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use rokmpc::error::Error;
use rokmpc::koopman::{FullKoopmanModel, ReducedKoopmanModel};
use rokmpc::mpc::{design_feedback_gain, mpc_step, robust_action, MpcConfig, RobustGain, SetPoint};
use rokmpc::plant::{
    find_equilibrium, Disturbance, Integrator, PlantInput, PlantParams, PlantState, INPUT_DIM,
    STATE_DIM,
};
use rokmpc::qp::QpSolution;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RokStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    ParseError = 4,
    NumericalFailure = 5,
    Infeasible = 6,
    NotReady = 7,
    Panic = 8,
}

pub const ROK_STATE_DIM: usize = 9;
pub const ROK_INPUT_DIM: usize = 3;
const _: () = assert!(ROK_STATE_DIM == STATE_DIM && ROK_INPUT_DIM == INPUT_DIM);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RokStatus {
    match e {
        Error::Dimension { .. } => RokStatus::DimensionMismatch,
        Error::Json(_) | Error::TomlDe(_) | Error::TomlSer(_) | Error::Csv(_) => RokStatus::ParseError,
        Error::Infeasible(_) => RokStatus::Infeasible,
        Error::InvalidArgument(_) | Error::Config(_) | Error::Io(_) => RokStatus::InvalidArgument,
        Error::Controller { source, .. } => status_of(source),
        _ => RokStatus::NumericalFailure,
    }
}

type FfiResult = Result<(), (RokStatus, String)>;

fn fail(status: RokStatus, msg: impl Into<String>) -> (RokStatus, String) {
    (status, msg.into())
}

fn lib_err(e: Error) -> (RokStatus, String) {
    (status_of(&e), e.to_string())
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> FfiResult) -> RokStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RokStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RokStatus::Panic
        }
    }
}

unsafe fn read<'a, T>(p: *const T, what: &str) -> Result<&'a T, (RokStatus, String)> {
    p.as_ref()
        .ok_or_else(|| fail(RokStatus::NullPointer, format!("{what} is null")))
}

unsafe fn read_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (RokStatus, String)> {
    p.as_mut()
        .ok_or_else(|| fail(RokStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (RokStatus, String)> {
    if p.is_null() {
        return Err(fail(RokStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (RokStatus, String)> {
    if p.is_null() {
        return Err(fail(RokStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RokStatus, String)> {
    if p.is_null() {
        return Err(fail(RokStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(RokStatus::ParseError, format!("{what} is not UTF-8: {e}")))
}

fn check_len(len: usize, expected: usize, what: &str) -> FfiResult {
    if len != expected {
        return Err(fail(
            RokStatus::DimensionMismatch,
            format!("{what}: expected {expected} values, got {len}"),
        ));
    }
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(fail(RokStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rok_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rok_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Plant parameters plus integrator settings.
pub struct RokPlant {
    params: PlantParams,
    integrator: Integrator,
}

/// Built-in benchmark parameters.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rok_plant_new_default(out: *mut *mut RokPlant) -> RokStatus {
    guard(|| {
        put(
            out,
            RokPlant {
                params: PlantParams::default(),
                integrator: Integrator::default(),
            },
        )
    })
}

/// Parameters from TOML text with the same keys as the shipped file.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` as in
/// [`rok_plant_new_default`].
#[no_mangle]
pub unsafe extern "C" fn rok_plant_from_toml(toml: *const c_char, out: *mut *mut RokPlant) -> RokStatus {
    guard(|| {
        let params = PlantParams::from_toml_str(text(toml, "toml")?).map_err(lib_err)?;
        put(
            out,
            RokPlant {
                params,
                integrator: Integrator::default(),
            },
        )
    })
}

/// # Safety
/// `plant` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rok_plant_free(plant: *mut RokPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Advances the plant `dt` hours. `w` holds the nine additive disturbances in
/// state order (temperature slots included) and may be null for none.
///
/// # Safety
/// `x` and `x_next` point to `ROK_STATE_DIM` doubles, `u` to `ROK_INPUT_DIM`,
/// `w` to `ROK_STATE_DIM` or is null.
#[no_mangle]
pub unsafe extern "C" fn rok_plant_step(
    plant: *const RokPlant,
    x: *const f64,
    u: *const f64,
    w: *const f64,
    dt: f64,
    x_next: *mut f64,
) -> RokStatus {
    guard(|| {
        let plant = read(plant, "plant")?;
        let x = PlantState::from_slice(slice(x, STATE_DIM, "x")?).map_err(lib_err)?;
        let u = PlantInput::from_slice(slice(u, INPUT_DIM, "u")?).map_err(lib_err)?;
        let w = if w.is_null() {
            Disturbance::zero()
        } else {
            disturbance_from_state_order(slice(w, STATE_DIM, "w")?)
        };
        let out = plant
            .integrator
            .step(&x, &u, &w, dt, &plant.params)
            .map_err(lib_err)?;
        slice_mut(x_next, STATE_DIM, "x_next")?.copy_from_slice(&out.state.0);
        Ok(())
    })
}

fn disturbance_from_state_order(w: &[f64]) -> Disturbance {
    let mut d = Disturbance::zero();
    let mut ci = 0;
    let mut ti = 0;
    for (i, v) in w.iter().enumerate() {
        if rokmpc::plant::TEMPERATURE_INDICES.contains(&i) {
            d.temp[ti] = *v;
            ti += 1;
        } else {
            d.conc[ci] = *v;
            ci += 1;
        }
    }
    d
}

/// Equilibrium state at input `u`, searched from `guess`.
///
/// # Safety
/// `u` points to `ROK_INPUT_DIM` doubles, `guess` and `x_eq` to
/// `ROK_STATE_DIM`.
#[no_mangle]
pub unsafe extern "C" fn rok_plant_equilibrium(
    plant: *const RokPlant,
    u: *const f64,
    guess: *const f64,
    x_eq: *mut f64,
) -> RokStatus {
    guard(|| {
        let plant = read(plant, "plant")?;
        let u = PlantInput::from_slice(slice(u, INPUT_DIM, "u")?).map_err(lib_err)?;
        let g = PlantState::from_slice(slice(guess, STATE_DIM, "guess")?).map_err(lib_err)?;
        let x = find_equilibrium(&u, &g, &plant.params).map_err(lib_err)?;
        slice_mut(x_eq, STATE_DIM, "x_eq")?.copy_from_slice(&x.0);
        Ok(())
    })
}

/// An identified predictor. Full models are held with an identity basis.
pub struct RokModel {
    inner: ReducedKoopmanModel,
}

/// Loads a model JSON as written by `identify`; both the reduced and the
/// full format are accepted.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rok_model_from_json(json: *const c_char, out: *mut *mut RokModel) -> RokStatus {
    guard(|| {
        let s = text(json, "json")?;
        let inner = match ReducedKoopmanModel::from_json(s) {
            Ok(m) => m,
            Err(reduced_err) => match FullKoopmanModel::from_json(s) {
                Ok(f) => f.as_reduced(),
                Err(_) => return Err(lib_err(reduced_err)),
            },
        };
        put(out, RokModel { inner })
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rok_model_free(model: *mut RokModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent order `r`; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rok_model_order(model: *const RokModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.order())
}

/// Lifts and projects a physical state into `q` (`q_len` must equal the
/// order).
///
/// # Safety
/// `x` points to `ROK_STATE_DIM` doubles, `q` to `q_len`.
#[no_mangle]
pub unsafe extern "C" fn rok_model_encode(
    model: *const RokModel,
    x: *const f64,
    q: *mut f64,
    q_len: usize,
) -> RokStatus {
    guard(|| {
        let m = &read(model, "model")?.inner;
        check_len(q_len, m.order(), "q")?;
        let enc = m.encode(slice(x, STATE_DIM, "x")?).map_err(lib_err)?;
        slice_mut(q, q_len, "q")?.copy_from_slice(enc.as_slice());
        Ok(())
    })
}

/// `q_next = A q + B s(u)` with a physical input `u`.
///
/// # Safety
/// `q` and `q_next` point to `q_len` doubles, `u` to `ROK_INPUT_DIM`.
#[no_mangle]
pub unsafe extern "C" fn rok_model_step(
    model: *const RokModel,
    q: *const f64,
    u: *const f64,
    q_next: *mut f64,
    q_len: usize,
) -> RokStatus {
    guard(|| {
        let m = &read(model, "model")?.inner;
        check_len(q_len, m.order(), "q")?;
        let qv = DVector::from_column_slice(slice(q, q_len, "q")?);
        let un = m.scale_input(slice(u, INPUT_DIM, "u")?);
        let next = m.step(&qv, &un);
        slice_mut(q_next, q_len, "q_next")?.copy_from_slice(next.as_slice());
        Ok(())
    })
}

/// Physical state reconstructed from `q`.
///
/// # Safety
/// `q` points to `q_len` doubles, `x` to `ROK_STATE_DIM`.
#[no_mangle]
pub unsafe extern "C" fn rok_model_decode(
    model: *const RokModel,
    q: *const f64,
    q_len: usize,
    x: *mut f64,
) -> RokStatus {
    guard(|| {
        let m = &read(model, "model")?.inner;
        check_len(q_len, m.order(), "q")?;
        let x_hat = m.decode(&DVector::from_column_slice(slice(q, q_len, "q")?));
        slice_mut(x, STATE_DIM, "x")?.copy_from_slice(x_hat.as_slice());
        Ok(())
    })
}

/// Receding-horizon tracking controller with an optional robust correction.
pub struct RokController {
    model: ReducedKoopmanModel,
    cfg: MpcConfig,
    target: Option<SetPoint>,
    gain: Option<RobustGain>,
    warm: Option<QpSolution>,
    q_nominal: Option<DVector<f64>>,
}

/// Creates a controller for a copy of `model`. `q_diag` has `order` entries,
/// `r_diag`, `u_min` and `u_max` have `ROK_INPUT_DIM`; `dt` is in hours.
///
/// # Safety
/// Array pointers must reference the stated number of doubles; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rok_controller_new(
    model: *const RokModel,
    horizon: usize,
    q_diag: *const f64,
    q_len: usize,
    r_diag: *const f64,
    u_min: *const f64,
    u_max: *const f64,
    dt: f64,
    out: *mut *mut RokController,
) -> RokStatus {
    guard(|| {
        let m = &read(model, "model")?.inner;
        check_len(q_len, m.order(), "q_diag")?;
        let cfg = MpcConfig::diagonal(
            horizon,
            slice(q_diag, q_len, "q_diag")?,
            slice(r_diag, INPUT_DIM, "r_diag")?,
            slice(u_min, INPUT_DIM, "u_min")?.to_vec(),
            slice(u_max, INPUT_DIM, "u_max")?.to_vec(),
            dt,
        );
        cfg.validate(m).map_err(lib_err)?;
        put(
            out,
            RokController {
                model: m.clone(),
                cfg,
                target: None,
                gain: None,
                warm: None,
                q_nominal: None,
            },
        )
    })
}

/// # Safety
/// `ctrl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rok_controller_free(ctrl: *mut RokController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Sets the tracking target `(x_s, u_s)` in physical units.
///
/// # Safety
/// `x_s` points to `ROK_STATE_DIM` doubles, `u_s` to `ROK_INPUT_DIM`.
#[no_mangle]
pub unsafe extern "C" fn rok_controller_set_target(
    ctrl: *mut RokController,
    x_s: *const f64,
    u_s: *const f64,
) -> RokStatus {
    guard(|| {
        let c = read_mut(ctrl, "controller")?;
        let sp = SetPoint::new(
            &c.model,
            slice(x_s, STATE_DIM, "x_s")?,
            slice(u_s, INPUT_DIM, "u_s")?,
            0.0,
        )
        .map_err(lib_err)?;
        c.target = Some(sp);
        Ok(())
    })
}

/// Enables the robust correction with an LQR gain designed from the
/// controller weights. `spectral_radius` (nullable) receives `rho(A + B K)`.
///
/// # Safety
/// `spectral_radius` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn rok_controller_enable_robust(
    ctrl: *mut RokController,
    spectral_radius: *mut f64,
) -> RokStatus {
    guard(|| {
        let c = read_mut(ctrl, "controller")?;
        let g = design_feedback_gain(&c.model.a, &c.model.b, &c.cfg.q_weight, &c.cfg.r_weight)
            .map_err(lib_err)?;
        if let Some(out) = spectral_radius.as_mut() {
            *out = g.spectral_radius;
        }
        c.gain = Some(g);
        Ok(())
    })
}

/// Disables the robust correction and forgets the warm start.
///
/// # Safety
/// `ctrl` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rok_controller_reset(ctrl: *mut RokController) -> RokStatus {
    guard(|| {
        let c = read_mut(ctrl, "controller")?;
        c.warm = None;
        c.q_nominal = None;
        Ok(())
    })
}

/// One control step from the measured state `x`. Writes the physical input
/// to apply; `saturated` (nullable) is set to 1 when clipping changed it.
///
/// # Safety
/// `x` points to `ROK_STATE_DIM` doubles, `u` to `ROK_INPUT_DIM`;
/// `saturated` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn rok_controller_step(
    ctrl: *mut RokController,
    x: *const f64,
    u: *mut f64,
    saturated: *mut i32,
) -> RokStatus {
    guard(|| {
        let c = read_mut(ctrl, "controller")?;
        let sp = c
            .target
            .as_ref()
            .ok_or_else(|| fail(RokStatus::NotReady, "no target set"))?;
        let step = mpc_step(&c.model, slice(x, STATE_DIM, "x")?, sp, &c.cfg, c.warm.as_ref())
            .map_err(lib_err)?;
        let (applied, sat) = match &c.gain {
            Some(g) => {
                let e = match &c.q_nominal {
                    Some(qn) => &step.q_current - qn,
                    None => DVector::zeros(c.model.order()),
                };
                robust_action(&step.u_seq[0], &e, g, &c.model.input_scaling, &c.cfg.u_min, &c.cfg.u_max)
            }
            None => {
                let raw = step.first_input_raw(&c.model);
                let clipped: Vec<f64> = raw
                    .iter()
                    .zip(c.cfg.u_min.iter().zip(&c.cfg.u_max))
                    .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                    .collect();
                let sat = clipped != raw;
                (clipped, sat)
            }
        };
        slice_mut(u, INPUT_DIM, "u")?.copy_from_slice(&applied);
        if let Some(s) = saturated.as_mut() {
            *s = i32::from(sat);
        }
        c.q_nominal = Some(step.q_next.clone());
        c.warm = Some(step.solution);
        Ok(())
    })
}

/// Copies the `r x r` closed-loop matrix of the robust gain in row-major
/// order. Fails with `NotReady` before [`rok_controller_enable_robust`].
///
/// # Safety
/// `out` points to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rok_controller_closed_loop(
    ctrl: *const RokController,
    out: *mut f64,
    len: usize,
) -> RokStatus {
    guard(|| {
        let c = read(ctrl, "controller")?;
        let g = c
            .gain
            .as_ref()
            .ok_or_else(|| fail(RokStatus::NotReady, "robust correction not enabled"))?;
        let r = c.model.order();
        check_len(len, r * r, "closed-loop matrix")?;
        let ak: DMatrix<f64> = g.closed_loop(&c.model.a, &c.model.b);
        let dst = slice_mut(out, len, "out")?;
        for i in 0..r {
            for j in 0..r {
                dst[i * r + j] = ak[(i, j)];
            }
        }
        Ok(())
    })
}
