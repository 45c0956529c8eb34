mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rokmpc::koopman::{fit_full, fit_reduced, pod_basis, reconstruction_mse, PodBasis, Snapshots};
use rokmpc::lifting::LiftingMap;
use rokmpc::scaling::AffineScaling;

fn identity_fit(seed: u64, n: usize, m: usize, k: usize) -> (DMatrix<f64>, DMatrix<f64>, Snapshots) {
    let mut rng = common::rng(seed);
    let (a, b) = common::stable_system(&mut rng, n, m, 0.9);
    let (x, u) = common::simulate_linear(&mut rng, &a, &b, k);
    (a, b, Snapshots::new(x, u).unwrap())
}

#[test]
fn noise_free_linear_system_is_recovered_exactly() {
    let (n, m) = (4, 2);
    let (a, b, snaps) = identity_fit(7, n, m, 500);
    let lifting = LiftingMap::identity(AffineScaling::identity(n));
    let model = fit_reduced(&snaps, &lifting, &AffineScaling::identity(m), n).unwrap();
    let phi = &model.basis.phi_r;
    let a_back = phi.transpose() * &model.a * phi;
    let b_back = phi.transpose() * &model.b;
    assert!((&a_back - &a).amax() <= 1e-8, "A error {}", (&a_back - &a).amax());
    assert!((&b_back - &b).amax() <= 1e-8, "B error {}", (&b_back - &b).amax());

    let full = fit_full(&snaps, &lifting, &AffineScaling::identity(m)).unwrap();
    assert!((&full.a - &a).amax() <= 1e-8);
    assert!((&full.b - &b).amax() <= 1e-8);
}

#[test]
fn pod_energy_matches_covariance_eigenvalues() {
    let mut rng = common::rng(3);
    // low-rank-ish data with a decaying spectrum
    let mix = common::gaussian_matrix(&mut rng, 16, 16);
    let scales = DMatrix::from_fn(16, 16, |i, j| if i == j { 0.7f64.powi(i as i32) } else { 0.0 });
    let z = mix * scales * common::gaussian_matrix(&mut rng, 16, 1000);
    let reference = common::covariance_eigenvalues(&z);
    let k = z.ncols() as f64;
    for r in 1..=16 {
        let basis = pod_basis(&z, r).unwrap();
        for (got, want) in basis.eigvals.iter().zip(&reference) {
            assert!((got - want).abs() <= 1e-9 * reference[0]);
        }
        let tail: f64 = reference[r..].iter().sum();
        let mse = reconstruction_mse(&basis, &z);
        assert!(
            (mse - tail * (k - 1.0) / k).abs() <= 1e-9 * reference[0],
            "r = {r}: {mse} vs {tail}"
        );
    }
}

#[test]
fn pod_beats_random_subspaces() {
    let mut rng = common::rng(5);
    let z = common::gaussian_matrix(&mut rng, 10, 8) * common::gaussian_matrix(&mut rng, 8, 400);
    for r in [1, 3, 6] {
        let pod = pod_basis(&z, r).unwrap();
        let best = reconstruction_mse(&pod, &z);
        for _ in 0..20 {
            let q = common::gaussian_matrix(&mut rng, 10, r).qr().q();
            let other = PodBasis {
                phi_r: q.transpose(),
                ..pod.clone()
            };
            assert!(reconstruction_mse(&other, &z) >= best - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn basis_rows_are_orthonormal(seed in 0u64..1000, n in 2usize..12, r_frac in 0.1f64..1.0) {
        let mut rng = common::rng(seed);
        let z = common::gaussian_matrix(&mut rng, n, 200);
        let r = ((n as f64 * r_frac).ceil() as usize).clamp(1, n);
        let b = pod_basis(&z, r).unwrap();
        let gram = &b.phi_r * b.phi_r.transpose();
        prop_assert!((gram - DMatrix::identity(r, r)).amax() <= 1e-10);
        prop_assert!(b.eigvals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn reconstruction_error_is_monotone_in_order(seed in 0u64..1000) {
        let mut rng = common::rng(seed);
        let z = common::gaussian_matrix(&mut rng, 8, 100);
        let errs: Vec<f64> = (1..=8)
            .map(|r| reconstruction_mse(&pod_basis(&z, r).unwrap(), &z))
            .collect();
        prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(errs[7] <= 1e-20_f64.max(1e-12 * errs[0]));
    }

    #[test]
    fn linear_recovery_holds_for_random_systems(seed in 0u64..1000, n in 1usize..6, m in 1usize..3) {
        let (a, b, snaps) = identity_fit(seed, n, m, 60 + 10 * (n + m));
        let lifting = LiftingMap::identity(AffineScaling::identity(n));
        let model = fit_reduced(&snaps, &lifting, &AffineScaling::identity(m), n).unwrap();
        let phi = &model.basis.phi_r;
        prop_assert!((phi.transpose() * &model.a * phi - &a).amax() <= 1e-7);
        prop_assert!((phi.transpose() * &model.b - &b).amax() <= 1e-7);
    }
}
