//! Ground-truth predictor: simulates the perturbed action on the true plant.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::{Prediction, Predictor};
use crate::action::{apply_delta, DeltaAction, Task};
use crate::error::{IrpError, Result};
use crate::raster::{trajectory_cells, GridSpec, OccupancyGrid, SparseGrid};
use crate::sim::Plant;

/// Predicts `execute(a_i + δa)` on the plant itself, with the seed of the
/// next step, so a noiseless plant's prediction is exactly what the next
/// execution will observe. The prediction carries the trajectory.
pub struct GtPredictor {
    plant: Arc<dyn Plant>,
    spec: GridSpec,
    executed: Mutex<Option<(Vec<f64>, usize)>>,
}

impl GtPredictor {
    pub fn new(plant: Arc<dyn Plant>, spec: GridSpec) -> Self {
        GtPredictor {
            plant,
            spec,
            executed: Mutex::new(None),
        }
    }

    fn current(&self) -> Result<(Vec<f64>, usize)> {
        self.executed
            .lock()
            .unwrap()
            .clone()
            .ok_or_else(|| IrpError::contract("ground-truth predictor used before any execution"))
    }

    fn predict_from(&self, a: &[f64], step: usize, delta: &DeltaAction) -> Result<Prediction> {
        let next = apply_delta(a, delta)?;
        let traj = self.plant.execute(&next, step + 1)?;
        Ok(Prediction {
            grid: SparseGrid::from_cells(self.spec, trajectory_cells(&traj, &self.spec)),
            final_keypoints: None,
            trajectory: Some(traj),
            provenance: "gt",
        })
    }
}

impl Predictor for GtPredictor {
    fn tag(&self) -> &'static str {
        "gt"
    }

    fn task(&self) -> Task {
        self.plant.task()
    }

    fn predict(&self, _observed: &OccupancyGrid, delta: &DeltaAction) -> Result<Prediction> {
        let (a, step) = self.current()?;
        self.predict_from(&a, step, delta)
    }

    fn predict_batch(&self, _observed: &OccupancyGrid, deltas: &[DeltaAction]) -> Result<Vec<Prediction>> {
        let (a, step) = self.current()?;
        deltas.par_iter().map(|d| self.predict_from(&a, step, d)).collect()
    }

    fn observe_executed(&self, a_norm: &[f64], step: usize) {
        *self.executed.lock().unwrap() = Some((a_norm.to_vec(), step));
    }
}
