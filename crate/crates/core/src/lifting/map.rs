use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{CoefficientEstimate, FunctionLibrary, LibraryEntry};
use crate::error::{Error, Result};
use crate::scaling::AffineScaling;

/// `Psi(x) = [s(x); psi_1(s(x)); ...]` where `s` is the stored state
/// normalization. The first `state_dim` components are the normalized
/// state itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingMap {
    pub normalizer: AffineScaling,
    /// Indices into the originating library, in lifted order.
    pub selected: Vec<usize>,
    pub functions: Vec<LibraryEntry>,
    pub power_shift: f64,
}

impl LiftingMap {
    /// `Psi(x) = s(x)`: no extra observables.
    pub fn identity(normalizer: AffineScaling) -> Self {
        Self {
            normalizer,
            selected: Vec::new(),
            functions: Vec::new(),
            power_shift: 1e-3,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Lifted dimension `N = n + |selected|`.
    pub fn lifted_dim(&self) -> usize {
        self.state_dim() + self.functions.len()
    }

    pub fn describe(&self) -> Vec<String> {
        self.functions.iter().map(|f| f.to_string()).collect()
    }

    pub fn lift(&self, x: &[f64]) -> Result<DVector<f64>> {
        let n = self.state_dim();
        if x.len() != n {
            return Err(Error::dim("lifting input", n, x.len()));
        }
        let xn = self.normalizer.apply(x);
        let mut z = DVector::zeros(self.lifted_dim());
        z.rows_mut(0, n).copy_from_slice(&xn);
        for (i, f) in self.functions.iter().enumerate() {
            z[n + i] = f.evaluate(&xn, self.power_shift)?;
        }
        Ok(z)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Indices whose row magnitude exceeds `lambda`, in library order.
pub fn selected_indices(est: &CoefficientEstimate, lambda: f64) -> Vec<usize> {
    est.row_magnitudes()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| *m > lambda)
        .map(|(i, _)| i)
        .collect()
}

/// Keeps library entry `i` iff `max_j |omega[i, j]| > lambda`.
pub fn select_functions(
    est: &CoefficientEstimate,
    lambda: f64,
    library: &FunctionLibrary,
    normalizer: AffineScaling,
) -> Result<LiftingMap> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if est.library_size() != library.len() {
        return Err(Error::dim("coefficient rows", library.len(), est.library_size()));
    }
    if normalizer.dim() != library.dim {
        return Err(Error::dim("lifting normalizer", library.dim, normalizer.dim()));
    }
    let selected: Vec<usize> = selected_indices(est, lambda)
        .into_iter()
        .filter(|&i| !library.entries[i].is_state_coordinate())
        .collect();
    if selected.is_empty() {
        log::warn!("no library function exceeds lambda = {lambda}; using the identity lifting");
    }
    Ok(LiftingMap {
        normalizer,
        functions: selected.iter().map(|&i| library.entries[i].clone()).collect(),
        selected,
        power_shift: library.power_shift,
    })
}

/// A threshold halfway between the `count`-th and `count+1`-th largest row
/// magnitudes, so that exactly `count` rows are selected.
pub fn lambda_for_count(est: &CoefficientEstimate, count: usize) -> Result<f64> {
    let mut mags = est.row_magnitudes();
    if count == 0 || count >= mags.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {count} of {} functions by threshold",
            mags.len()
        )));
    }
    mags.sort_by(|a, b| b.total_cmp(a));
    let (hi, lo) = (mags[count - 1], mags[count]);
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "rows {count} and {} tie at magnitude {hi}",
            count + 1
        )));
    }
    Ok(0.5 * (hi + lo))
}

/// Open interval of thresholds that select exactly `rows`, if one exists.
pub fn lambda_interval_for(est: &CoefficientEstimate, rows: &[usize]) -> Option<(f64, f64)> {
    let mags = est.row_magnitudes();
    let (mut inside_min, mut outside_max) = (f64::INFINITY, 0.0f64);
    for (i, m) in mags.iter().enumerate() {
        if rows.contains(&i) {
            inside_min = inside_min.min(*m);
        } else {
            outside_max = outside_max.max(*m);
        }
    }
    (inside_min > outside_max).then_some((outside_max, inside_min))
}
