use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{lift_dataset, pod::PodBasis, pod_basis, Snapshots};
use crate::error::{Error, Result};
use crate::lifting::LiftingMap;
use crate::linalg::{lstsq, row_major, spectral_radius};
use crate::scaling::AffineScaling;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const RANK_TOL: f64 = 1e-10;

/// What the least-squares solve saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub snapshots: usize,
    /// Rows of the stacked regressor `[Q; U]`.
    pub regressor_dim: usize,
    pub rank: usize,
    /// Frobenius norm of `Q+ - A Q - B U`.
    pub residual: f64,
    pub spectral_radius: f64,
}

/// `q+ = A_r q + B_r u_n`, `x = s^-1(C (phi_r^T (q - q_bar) + z_bar))` with
/// `u_n` the bound-normalized input and `s` the lifting's state normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedKoopmanModel {
    pub version: u32,
    #[serde(with = "row_major")]
    pub a: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub b: DMatrix<f64>,
    pub basis: PodBasis,
    pub lifting: LiftingMap,
    pub input_scaling: AffineScaling,
    pub diagnostics: FitDiagnostics,
}

/// Full-order model over all `N` lifted coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullKoopmanModel {
    pub version: u32,
    #[serde(with = "row_major")]
    pub a: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub b: DMatrix<f64>,
    pub lifting: LiftingMap,
    pub input_scaling: AffineScaling,
    #[serde(with = "crate::linalg::plain_vec")]
    pub z_bar: DVector<f64>,
    pub diagnostics: FitDiagnostics,
}

/// `C = [I_n, 0]`.
pub fn output_selector(n: usize, lifted: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, lifted, |i, j| if i == j { 1.0 } else { 0.0 })
}

impl ReducedKoopmanModel {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.lifting.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn lifted_dim(&self) -> usize {
        self.basis.lifted_dim()
    }

    pub fn c(&self) -> DMatrix<f64> {
        output_selector(self.state_dim(), self.lifted_dim())
    }

    /// `q = phi_r Psi(x)` for a physical-unit state.
    pub fn encode(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.basis.project(&self.lifting.lift(x)?))
    }

    /// Affine map `q -> s(x)`: returns `(D, d)` with `s(x) = D q + d`.
    pub fn output_map(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.state_dim();
        let phi_t = self.basis.phi_r.transpose();
        let d_mat = phi_t.rows(0, n).into_owned();
        let offset = self.basis.z_bar.rows(0, n) - &d_mat * &self.basis.q_bar;
        (d_mat, offset)
    }

    /// Normalized state reconstruction.
    pub fn decode_normalized(&self, q: &DVector<f64>) -> DVector<f64> {
        let (d_mat, offset) = self.output_map();
        d_mat * q + offset
    }

    /// Physical-unit state reconstruction.
    pub fn decode(&self, q: &DVector<f64>) -> DVector<f64> {
        self.lifting.normalizer.invert_vec(&self.decode_normalized(q))
    }

    pub fn scale_input(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.input_scaling.apply(u))
    }

    pub fn unscale_input(&self, u_n: &DVector<f64>) -> DVector<f64> {
        self.input_scaling.invert_vec(u_n)
    }

    /// One step with a normalized input.
    pub fn step(&self, q: &DVector<f64>, u_n: &DVector<f64>) -> DVector<f64> {
        &self.a * q + &self.b * u_n
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        check_version(m.version)?;
        m.check_dims()?;
        Ok(m)
    }

    fn check_dims(&self) -> Result<()> {
        let r = self.basis.order();
        if self.a.shape() != (r, r) {
            return Err(Error::dim("A_r rows", r, self.a.nrows()));
        }
        if self.b.nrows() != r {
            return Err(Error::dim("B_r rows", r, self.b.nrows()));
        }
        if self.basis.lifted_dim() != self.lifting.lifted_dim() {
            return Err(Error::dim("basis columns", self.lifting.lifted_dim(), self.basis.lifted_dim()));
        }
        if self.input_scaling.dim() != self.b.ncols() {
            return Err(Error::dim("input scaling", self.b.ncols(), self.input_scaling.dim()));
        }
        Ok(())
    }
}

impl FullKoopmanModel {
    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    /// The same predictor expressed with an identity basis.
    pub fn as_reduced(&self) -> ReducedKoopmanModel {
        ReducedKoopmanModel {
            version: self.version,
            a: self.a.clone(),
            b: self.b.clone(),
            basis: PodBasis::identity(self.z_bar.clone()),
            lifting: self.lifting.clone(),
            input_scaling: self.input_scaling.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        check_version(m.version)?;
        m.as_reduced().check_dims()?;
        Ok(m)
    }
}

fn check_version(v: u32) -> Result<()> {
    if v > MODEL_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "model format version {v} is newer than supported {MODEL_FORMAT_VERSION}"
        )));
    }
    Ok(())
}

/// Least-squares `[A, B]` from `q_{k+1} ~ A q_k + B u_k`. Columns of `q` are
/// `q_0..q_{K-1}`, columns of `u` are `u_0..u_{K-2}`.
fn regress(q: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, FitDiagnostics)> {
    let r = q.nrows();
    let m = u.nrows();
    let pairs = u.ncols();
    if q.ncols() != pairs + 1 {
        return Err(Error::dim("regression snapshots", pairs + 1, q.ncols()));
    }
    if pairs < r + m {
        return Err(Error::InvalidArgument(format!(
            "{} snapshots are too few for order {r} with {m} inputs (need at least {})",
            pairs + 1,
            r + m + 1
        )));
    }
    let mut g = DMatrix::zeros(r + m, pairs);
    g.view_mut((0, 0), (r, pairs)).copy_from(&q.columns(0, pairs));
    g.view_mut((r, 0), (m, pairs)).copy_from(u);
    let q_next = q.columns(1, pairs).into_owned();

    // [A B] G = Q+  <=>  G^T [A B]^T = Q+^T
    let (xt, rank) = lstsq(&g.transpose(), &q_next.transpose(), RANK_TOL);
    if rank < r + m {
        log::warn!(
            "regressor rank {rank} < {}; returning the minimum-norm solution",
            r + m
        );
    }
    let x = xt.transpose();
    let a = x.columns(0, r).into_owned();
    let b = x.columns(r, m).into_owned();
    let residual = (&q_next - &x * &g).norm();
    let diagnostics = FitDiagnostics {
        snapshots: pairs + 1,
        regressor_dim: r + m,
        rank,
        residual,
        spectral_radius: spectral_radius(&a),
    };
    Ok((a, b, diagnostics))
}

fn scaled_inputs(snaps: &Snapshots, input_scaling: &AffineScaling) -> Result<DMatrix<f64>> {
    if input_scaling.dim() != snaps.input_dim() {
        return Err(Error::dim("input scaling", snaps.input_dim(), input_scaling.dim()));
    }
    let mut u = snaps.inputs.clone();
    for mut c in u.column_iter_mut() {
        let v = input_scaling.apply(c.as_slice());
        c.copy_from_slice(&v);
    }
    Ok(u)
}

/// POD to order `r` followed by least squares in the reduced coordinates.
pub fn fit_reduced(
    snaps: &Snapshots,
    lifting: &LiftingMap,
    input_scaling: &AffineScaling,
    r: usize,
) -> Result<ReducedKoopmanModel> {
    let lifted = lift_dataset(snaps, lifting)?;
    let basis = pod_basis(&lifted.z, r)?;
    let q = &basis.phi_r * &lifted.z;
    let u = scaled_inputs(snaps, input_scaling)?;
    let (a, b, diagnostics) = regress(&q, &u)?;
    Ok(ReducedKoopmanModel {
        version: MODEL_FORMAT_VERSION,
        a,
        b,
        basis,
        lifting: lifting.clone(),
        input_scaling: input_scaling.clone(),
        diagnostics,
    })
}

pub fn fit_full(
    snaps: &Snapshots,
    lifting: &LiftingMap,
    input_scaling: &AffineScaling,
) -> Result<FullKoopmanModel> {
    let lifted = lift_dataset(snaps, lifting)?;
    let u = scaled_inputs(snaps, input_scaling)?;
    let (a, b, diagnostics) = regress(&lifted.z, &u)?;
    Ok(FullKoopmanModel {
        version: MODEL_FORMAT_VERSION,
        a,
        b,
        lifting: lifting.clone(),
        input_scaling: input_scaling.clone(),
        z_bar: lifted.mean,
        diagnostics,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Data from `x+ = A0 x + B0 u` with random inputs.
    pub(crate) fn linear_data(seed: u64, k: usize) -> (DMatrix<f64>, DMatrix<f64>, Snapshots) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a0 = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, -0.05, 0.8, 0.2, 0.0, 0.1, 0.7]);
        let b0 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, -0.3, 0.0, 0.8]);
        let mut x = DMatrix::zeros(3, k);
        let u = DMatrix::from_fn(2, k - 1, |_, _| rng.random_range(-1.0..1.0));
        x.set_column(0, &DVector::from_vec(vec![0.3, -0.2, 0.5]));
        for j in 1..k {
            let next = &a0 * x.column(j - 1) + &b0 * u.column(j - 1);
            x.set_column(j, &next);
        }
        (a0, b0, Snapshots::new(x, u).unwrap())
    }

    fn identity_lifting(n: usize) -> LiftingMap {
        LiftingMap::identity(AffineScaling::identity(n))
    }

    #[test]
    fn full_fit_recovers_linear_system() {
        let (a0, b0, snaps) = linear_data(7, 200);
        let m = fit_full(&snaps, &identity_lifting(3), &AffineScaling::identity(2)).unwrap();
        assert!((&m.a - &a0).amax() < 1e-8);
        assert!((&m.b - &b0).amax() < 1e-8);
        assert_eq!(m.diagnostics.rank, 5);
    }

    #[test]
    fn reduced_fit_at_full_order_recovers_rotated_system() {
        let (a0, b0, snaps) = linear_data(8, 200);
        let m = fit_reduced(&snaps, &identity_lifting(3), &AffineScaling::identity(2), 3).unwrap();
        // q = phi x, so A_r = phi A0 phi^T and B_r = phi B0
        let phi = &m.basis.phi_r;
        assert!((&m.a - phi * &a0 * phi.transpose()).amax() < 1e-8);
        assert!((&m.b - phi * &b0).amax() < 1e-8);
    }

    #[test]
    fn zero_data_gives_zero_min_norm_solution() {
        let snaps = Snapshots::new(DMatrix::zeros(2, 20), DMatrix::zeros(1, 19)).unwrap();
        let m = fit_full(&snaps, &identity_lifting(2), &AffineScaling::identity(1)).unwrap();
        assert_eq!(m.diagnostics.rank, 0);
        assert!(m.b.iter().all(|v| *v == 0.0) && m.a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_few_snapshots_is_an_error() {
        let (_, _, snaps) = linear_data(1, 5);
        assert!(fit_full(&snaps, &identity_lifting(3), &AffineScaling::identity(2)).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (_, _, snaps) = linear_data(2, 60);
        let m = fit_reduced(&snaps, &identity_lifting(3), &AffineScaling::identity(2), 2).unwrap();
        let back = ReducedKoopmanModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let f = fit_full(&snaps, &identity_lifting(3), &AffineScaling::identity(2)).unwrap();
        assert_eq!(FullKoopmanModel::from_json(&f.to_json().unwrap()).unwrap(), f);
    }

    #[test]
    fn future_version_is_rejected() {
        let (_, _, snaps) = linear_data(2, 60);
        let mut m = fit_full(&snaps, &identity_lifting(3), &AffineScaling::identity(2)).unwrap();
        m.version = MODEL_FORMAT_VERSION + 1;
        assert!(FullKoopmanModel::from_json(&m.to_json().unwrap()).is_err());
    }

    #[test]
    fn selector_has_one_unit_per_row() {
        let c = output_selector(3, 5);
        for row in c.row_iter() {
            assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|v| **v == 0.0).count(), 4);
        }
    }

    #[test]
    fn output_map_matches_reconstruction() {
        let (_, _, snaps) = linear_data(3, 80);
        let m = fit_reduced(&snaps, &identity_lifting(3), &AffineScaling::identity(2), 2).unwrap();
        let q = DVector::from_vec(vec![0.4, -1.1]);
        let direct = m.c() * m.basis.reconstruct(&q);
        assert!((m.decode_normalized(&q) - direct).amax() < 1e-14);
    }
}
