use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{plain_vec, row_major};

/// Leading POD directions of mean-removed lifted snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    /// `r x N`, orthonormal rows.
    #[serde(with = "row_major")]
    pub phi_r: DMatrix<f64>,
    #[serde(with = "plain_vec")]
    pub z_bar: DVector<f64>,
    /// `phi_r * z_bar`.
    #[serde(with = "plain_vec")]
    pub q_bar: DVector<f64>,
    /// All `N` covariance eigenvalues (normalized by `K - 1`), descending.
    pub eigvals: Vec<f64>,
    /// Number of snapshots the basis was computed from.
    pub snapshots: usize,
}

impl PodBasis {
    /// Trivial basis `phi = I_N` around `z_bar`.
    pub fn identity(z_bar: DVector<f64>) -> Self {
        let n = z_bar.len();
        Self {
            phi_r: DMatrix::identity(n, n),
            q_bar: z_bar.clone(),
            z_bar,
            eigvals: Vec::new(),
            snapshots: 0,
        }
    }

    pub fn order(&self) -> usize {
        self.phi_r.nrows()
    }

    pub fn lifted_dim(&self) -> usize {
        self.phi_r.ncols()
    }

    /// `q = phi_r z`.
    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.phi_r * z
    }

    /// `z_hat = phi_r^T (q - q_bar) + z_bar`.
    pub fn reconstruct(&self, q: &DVector<f64>) -> DVector<f64> {
        self.phi_r.tr_mul(&(q - &self.q_bar)) + &self.z_bar
    }

    /// Sum of eigenvalues beyond the retained order.
    pub fn tail_energy(&self) -> f64 {
        self.eigvals.iter().skip(self.order()).sum()
    }
}

/// Column means of an `N x K` snapshot matrix and the centered matrix.
pub fn center_columns(z: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = z.column_mean();
    let mut centered = z.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    (mean, centered)
}

/// POD of `N x K` lifted snapshots (not yet centered) to order `r`.
pub fn pod_basis(lifted: &DMatrix<f64>, r: usize) -> Result<PodBasis> {
    let (n, k) = lifted.shape();
    if r == 0 || r > n.min(k) {
        return Err(Error::InvalidArgument(format!(
            "POD order {r} must be in 1..={}",
            n.min(k)
        )));
    }
    let (z_bar, centered) = center_columns(lifted);
    let svd = centered.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let denom = (k.max(2) - 1) as f64;
    let mut eigvals: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2) / denom)
        .collect();
    eigvals.resize(n, 0.0);

    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-10 * smax && **s > 0.0)
        .count();
    if r > rank {
        log::warn!("POD order {r} exceeds numerical rank {rank}; padding with null directions");
    }

    let mut phi_r = DMatrix::zeros(r, n);
    for (row, &i) in order.iter().take(r).enumerate() {
        phi_r.row_mut(row).copy_from(&u.column(i).transpose());
    }
    let q_bar = &phi_r * &z_bar;
    Ok(PodBasis {
        phi_r,
        z_bar,
        q_bar,
        eigvals,
        snapshots: k,
    })
}

/// Mean over columns of `|z' - phi_r^T phi_r z'|^2` for centered snapshots.
pub fn reconstruction_mse(basis: &PodBasis, lifted: &DMatrix<f64>) -> f64 {
    let k = lifted.ncols();
    let mut total = 0.0;
    for c in lifted.column_iter() {
        let centered = c - &basis.z_bar;
        let q = &basis.phi_r * &centered;
        let rec = basis.phi_r.tr_mul(&q);
        total += (centered - rec).norm_squared();
    }
    total / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_snapshots(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // anisotropic so the spectrum is well separated
        DMatrix::from_fn(n, k, |i, _| rng.random_range(-1.0..1.0) * (1.0 + i as f64) + 3.0)
    }

    #[test]
    fn basis_rows_are_orthonormal_and_sorted() {
        let z = random_snapshots(6, 50, 1);
        let b = pod_basis(&z, 4).unwrap();
        let gram = &b.phi_r * b.phi_r.transpose();
        assert!((gram - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
        assert!(b.eigvals.windows(2).all(|w| w[0] >= w[1]));
        assert!(b.eigvals.iter().all(|e| *e >= -1e-10));
        assert!((&b.q_bar - &b.phi_r * &b.z_bar).amax() < 1e-15);
    }

    #[test]
    fn full_order_reconstruction_is_exact() {
        let z = random_snapshots(5, 30, 2);
        let b = pod_basis(&z, 5).unwrap();
        for c in z.column_iter() {
            let zc = c.clone_owned();
            assert!((b.reconstruct(&b.project(&zc)) - zc).amax() < 1e-10);
        }
    }

    #[test]
    fn repeated_sample_centers_to_zero() {
        let z = DMatrix::from_fn(3, 10, |i, _| i as f64 + 0.5);
        let (mean, centered) = center_columns(&z);
        assert!((mean - DVector::from_vec(vec![0.5, 1.5, 2.5])).amax() < 1e-15);
        assert!(centered.amax() < 1e-15);
    }

    #[test]
    fn more_rows_than_snapshots_pads_eigenvalues() {
        let z = random_snapshots(8, 4, 3);
        let b = pod_basis(&z, 3).unwrap();
        assert_eq!(b.eigvals.len(), 8);
        assert!(b.eigvals[4..].iter().all(|e| *e == 0.0));
        assert!(pod_basis(&z, 5).is_err());
    }

    #[test]
    fn order_must_be_positive() {
        assert!(pod_basis(&random_snapshots(3, 5, 4), 0).is_err());
    }
}
