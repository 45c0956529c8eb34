use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ReducedKoopmanModel;
use crate::error::{Error, Result};
use crate::scaling::AffineScaling;

/// Open-loop prediction in physical units. `states[0]` reconstructs the
/// initial lift; a diverged rollout stops early.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub diverged: bool,
}

/// Iterates `q+ = A q + B u_n` from `q_0 = phi Psi(x0)` without re-lifting.
/// Stops once `|q|` exceeds `bound`.
pub fn predict_rollout<U: AsRef<[f64]>>(
    model: &ReducedKoopmanModel,
    x0: &[f64],
    inputs: &[U],
    bound: f64,
) -> Result<Rollout> {
    let mut q = model.encode(x0)?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(model.decode(&q));
    for (k, u) in inputs.iter().enumerate() {
        let u = u.as_ref();
        if u.len() != model.input_dim() {
            return Err(Error::dim("rollout input", model.input_dim(), u.len()));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("input {k} is not finite")));
        }
        q = model.step(&q, &model.scale_input(u));
        if !(q.norm() <= bound) {
            log::warn!("rollout diverged at step {}", k + 1);
            return Ok(Rollout {
                states,
                diverged: true,
            });
        }
        states.push(model.decode(&q));
    }
    Ok(Rollout {
        states,
        diverged: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub per_state: Vec<f64>,
    /// `sqrt(1/(nK) sum_k |x_hat_k - x_k|^2)`.
    pub aggregate: f64,
}

/// RMSE between trajectories after applying `scaling` to both.
pub fn prediction_rmse<P: AsRef<[f64]>, A: AsRef<[f64]>>(
    predicted: &[P],
    actual: &[A],
    scaling: &AffineScaling,
) -> Result<RmseSummary> {
    if predicted.len() != actual.len() {
        return Err(Error::dim("rmse samples", actual.len(), predicted.len()));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("rmse over an empty window".into()));
    }
    let n = scaling.dim();
    let mut sq = vec![0.0; n];
    for (p, a) in predicted.iter().zip(actual) {
        let (p, a) = (p.as_ref(), a.as_ref());
        if p.len() != n || a.len() != n {
            return Err(Error::dim("rmse state", n, p.len().max(a.len())));
        }
        let (ps, as_) = (scaling.apply(p), scaling.apply(a));
        for i in 0..n {
            sq[i] += (ps[i] - as_[i]).powi(2);
        }
    }
    let k = predicted.len() as f64;
    let per_state: Vec<f64> = sq.iter().map(|s| (s / k).sqrt()).collect();
    let aggregate = (sq.iter().sum::<f64>() / (k * n as f64)).sqrt();
    Ok(RmseSummary {
        per_state,
        aggregate,
    })
}
