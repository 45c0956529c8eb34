//! Koopman predictors in lifted coordinates: POD basis, batch least-squares
//! fits of full- and reduced-order models, and open-loop rollouts.

pub(crate) mod fit;
mod pod;
mod predict;

pub use fit::{
    fit_full, fit_reduced, output_selector, FitDiagnostics, FullKoopmanModel, ReducedKoopmanModel,
    MODEL_FORMAT_VERSION,
};
pub use pod::{center_columns, pod_basis, reconstruction_mse, PodBasis};
pub use predict::{prediction_rmse, predict_rollout, RmseSummary, Rollout};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lifting::LiftingMap;
use crate::plant::TrajectoryDataset;

/// Physical-unit snapshot pairs: `states` is `n x K`, `inputs` is
/// `m x (K - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
}

impl Snapshots {
    pub fn new(states: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self> {
        if states.ncols() == 0 {
            return Err(Error::InvalidArgument("no snapshots".into()));
        }
        if inputs.ncols() + 1 != states.ncols() {
            return Err(Error::dim("snapshot inputs", states.ncols() - 1, inputs.ncols()));
        }
        Ok(Self { states, inputs })
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }
}

impl From<&TrajectoryDataset> for Snapshots {
    fn from(ds: &TrajectoryDataset) -> Self {
        let states = DMatrix::from_fn(crate::plant::STATE_DIM, ds.states.len(), |i, k| {
            ds.states[k].0[i]
        });
        let inputs = DMatrix::from_fn(crate::plant::INPUT_DIM, ds.inputs.len(), |i, k| {
            ds.inputs[k].0[i]
        });
        Self { states, inputs }
    }
}

/// `N x K` matrix whose column `k` is `Psi(x_k)`, plus its column mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSnapshots {
    pub z: DMatrix<f64>,
    pub mean: nalgebra::DVector<f64>,
}

impl LiftedSnapshots {
    pub fn zero_mean(&self) -> DMatrix<f64> {
        center_columns(&self.z).1
    }
}

pub fn lift_dataset(snapshots: &Snapshots, lifting: &LiftingMap) -> Result<LiftedSnapshots> {
    if snapshots.state_dim() != lifting.state_dim() {
        return Err(Error::dim("lifting state", lifting.state_dim(), snapshots.state_dim()));
    }
    let mut z = DMatrix::zeros(lifting.lifted_dim(), snapshots.len());
    for (k, x) in snapshots.states.column_iter().enumerate() {
        let col = lifting
            .lift(x.as_slice())
            .map_err(|e| Error::LiftingSample {
                sample: k,
                source: Box::new(e),
            })?;
        z.set_column(k, &col);
    }
    let mean = z.column_mean();
    Ok(LiftedSnapshots { z, mean })
}
