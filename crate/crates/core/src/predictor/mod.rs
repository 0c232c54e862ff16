//! Delta-dynamics predictors: given the observed trajectory of the action
//! just executed and a delta action, predict the trajectory the perturbed
//! action will produce.

mod gt;
mod knn;
mod mlp;
mod model_io;

pub use gt::GtPredictor;
pub use knn::{KnnConfig, KnnMode, KnnPredictor};
pub use mlp::{MlpNet, MlpPredictor, TrainConfig, TrainReport};
pub use model_io::ModelBlob;

use rayon::prelude::*;

use crate::action::{DeltaAction, Task};
use crate::error::Result;
use crate::raster::{mean_keypoint_distance, min_distance, OccupancyGrid, SparseGrid};
use crate::trajectory::{Goal, Trajectory};

/// Predicted outcome of one delta action.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Occupancy probabilities.
    pub grid: SparseGrid,
    /// Settled cloth keypoints, when the implementation carries them.
    pub final_keypoints: Option<Vec<[f64; 2]>>,
    /// Exact trajectory, when the implementation has one (ground truth).
    pub trajectory: Option<Trajectory>,
    pub provenance: &'static str,
}

impl Prediction {
    /// Distance to the goal used for action selection; `+∞` when the
    /// thresholded prediction is empty.
    ///
    /// Rope: exact polyline distance when a trajectory is carried, else the
    /// nearest supra-threshold cell center. Cloth: mean keypoint distance
    /// on carried keypoints, else the mean over keypoints of the distance
    /// from each target to its own channel's supra-threshold cells.
    pub fn distance(&self, g: &Goal, threshold: f64) -> Result<f64> {
        if self.grid.is_empty_at(threshold) && self.trajectory.is_none() && self.final_keypoints.is_none() {
            return Ok(f64::INFINITY);
        }
        match g {
            Goal::Rope(_) => match &self.trajectory {
                Some(t) => min_distance(t, g),
                None => self.grid.min_distance(g, threshold),
            },
            Goal::Cloth(target) => {
                if let Some(k) = self
                    .final_keypoints
                    .as_ref()
                    .or(self.trajectory.as_ref().and_then(|t| t.final_keypoints.as_ref()))
                {
                    return mean_keypoint_distance(k, g);
                }
                let n = target.len().min(self.grid.spec.channels);
                Ok((0..n)
                    .map(|c| self.grid.channel_min_distance(c, target[c], threshold))
                    .sum::<f64>()
                    / n as f64)
            }
        }
    }
}

/// The delta-dynamics contract. Implementations are frozen after building,
/// so identical inputs give identical outputs.
pub trait Predictor: Send + Sync {
    fn tag(&self) -> &'static str;

    fn task(&self) -> Task;

    /// Predicts one delta. Implementations that share work across deltas
    /// (matching the observation once) override [`Predictor::predict_batch`].
    fn predict(&self, observed: &OccupancyGrid, delta: &DeltaAction) -> Result<Prediction> {
        let mut out = self.predict_batch(observed, std::slice::from_ref(delta))?;
        Ok(out.remove(0))
    }

    fn predict_batch(&self, observed: &OccupancyGrid, deltas: &[DeltaAction]) -> Result<Vec<Prediction>> {
        deltas.par_iter().map(|d| self.predict(observed, d)).collect()
    }

    /// Called by the controller after executing `a_norm` at `step`; only
    /// the ground-truth predictor needs it.
    fn observe_executed(&self, _a_norm: &[f64], _step: usize) {}
}
