mod common;

use rokmpc::lifting::{lambda_interval_for, select_functions, selected_indices, LiftingMap};
use rokmpc::scaling::AffineScaling;

#[test]
fn planted_functions_are_recovered_in_a_threshold_interval() {
    let (lib, planted, est) = common::planted_library_problem(11, 0.1);
    assert!(lib.len() >= 100, "library has only {} entries", lib.len());
    let mut rows = planted.clone();
    rows.sort_unstable();
    let (lo, hi) = lambda_interval_for(&est, &rows).expect("no threshold isolates the planted rows");
    assert!(lo < hi);
    let lambda = 0.5 * (lo + hi);
    assert_eq!(selected_indices(&est, lambda), rows);
    let map: LiftingMap = select_functions(&est, lambda, &lib, AffineScaling::identity(7)).unwrap();
    assert_eq!(map.selected, rows);
    assert_eq!(map.lifted_dim(), 7 + 3);
}

#[test]
fn recovery_holds_across_noise_draws() {
    for seed in 0..5 {
        let (_, planted, est) = common::planted_library_problem(100 + seed, 0.1);
        let mut rows = planted.clone();
        rows.sort_unstable();
        assert!(lambda_interval_for(&est, &rows).is_some(), "seed {seed}");
    }
}

#[test]
fn heavy_noise_eventually_breaks_the_separation() {
    // guards against an oracle that passes regardless of the data
    let (_, planted, est) = common::planted_library_problem(3, 50.0);
    let mut rows = planted.clone();
    rows.sort_unstable();
    assert!(lambda_interval_for(&est, &rows).is_none());
}
