//! Candidate lifting functions, Kalman-GSINDy coefficient estimation and
//! threshold selection of the lifting map.

mod kalman;
mod library;
mod map;

pub use kalman::{fold_kalman_gsindy, kalman_gsindy_step, CoefficientEstimate, KalmanGsindyConfig};
pub use library::{hermite, Family, FunctionLibrary, LibraryConfig, LibraryEntry};
pub use map::{
    lambda_for_count, lambda_interval_for, select_functions, selected_indices, LiftingMap,
};

use crate::error::Result;
use crate::plant::TrajectoryDataset;
use crate::scaling::AffineScaling;

/// Runs the recursion over a plant dataset in normalized coordinates: the
/// regressor is the library evaluated at `s(x_k)`, the measurement is
/// `s(x_k)`. The first sample only seeds the prior.
pub fn run_kalman_gsindy(
    dataset: &TrajectoryDataset,
    library: &FunctionLibrary,
    normalizer: &AffineScaling,
    cfg: &KalmanGsindyConfig,
) -> Result<CoefficientEstimate> {
    cfg.validate()?;
    let n = normalizer.dim();
    let mut est = CoefficientEstimate::new(library.len(), n, cfg.p0);
    for x in dataset.states.iter().skip(1) {
        let xn = normalizer.apply(x.as_slice());
        let theta = library.evaluate_row(&xn)?;
        est.update(&theta, &xn, cfg.q_proc, cfg.r_meas)?;
    }
    Ok(est)
}
