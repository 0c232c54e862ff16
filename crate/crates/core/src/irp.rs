//! The iterative residual policy loop: execute, measure, sample deltas,
//! predict each, take the best, repeat.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::{apply_delta, check_unit_box, DeltaAction, Task};
use crate::error::{IrpError, Result};
use crate::predictor::{Prediction, Predictor};
use crate::raster::{mean_keypoint_distance, min_distance, rasterize, GridSpec};
use crate::rng::RngStream;
use crate::sim::Plant;
use crate::trajectory::{Goal, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrpConfig {
    pub n_samples: usize,
    pub sigma_gain: f64,
    /// Upper bound on the adaptive σ, normalized units.
    pub sigma_cap: f64,
    pub threshold: f64,
    pub d_stop: f64,
    pub max_step: usize,
    /// Off gives the constant-σ ablation.
    pub adaptive_sigma: bool,
    pub const_sigma: f64,
}

impl Default for IrpConfig {
    fn default() -> Self {
        IrpConfig {
            n_samples: 128,
            sigma_gain: 0.5,
            sigma_cap: 0.25,
            threshold: 0.2,
            d_stop: 0.02,
            max_step: 16,
            adaptive_sigma: true,
            const_sigma: 0.125,
        }
    }
}

impl IrpConfig {
    /// Budget used in the deployment world.
    pub fn deployment() -> Self {
        IrpConfig {
            max_step: 10,
            ..Self::default()
        }
    }

    pub fn const_sigma() -> Self {
        IrpConfig {
            adaptive_sigma: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(IrpError::contract("n_samples must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(IrpError::contract("threshold must lie in (0, 1)"));
        }
        if !(self.d_stop >= 0.0) {
            return Err(IrpError::contract("d_stop must be non-negative"));
        }
        if self.max_step == 0 {
            return Err(IrpError::contract("max_step must be at least 1"));
        }
        if !(self.sigma_gain >= 0.0 && self.sigma_cap >= 0.0 && self.const_sigma >= 0.0) {
            return Err(IrpError::contract("sampling scales must be non-negative"));
        }
        Ok(())
    }

    /// Perturbation scale after observing distance `d_i`.
    pub fn sigma(&self, d_i: f64) -> f64 {
        if self.adaptive_sigma {
            (self.sigma_gain * d_i).min(self.sigma_cap)
        } else {
            self.const_sigma
        }
    }
}

/// `n_samples` deltas with i.i.d. `N(0, σ²)` components.
pub fn sample_deltas(d_i: f64, dim: usize, cfg: &IrpConfig, stream: &mut RngStream) -> Vec<DeltaAction> {
    let sigma = cfg.sigma(d_i);
    (0..cfg.n_samples)
        .map(|_| DeltaAction((0..dim).map(|_| sigma * stream.normal()).collect()))
        .collect()
}

/// Index of the prediction closest to the goal. Ties go to the smaller
/// delta norm, then the lower index; empty predictions rank last.
pub fn select(preds: &[Prediction], deltas: &[DeltaAction], g: &Goal, cfg: &IrpConfig) -> Result<(usize, f64)> {
    if preds.is_empty() || preds.len() != deltas.len() {
        return Err(IrpError::contract("selection needs one prediction per delta"));
    }
    let dist = preds
        .iter()
        .map(|p| p.distance(g, cfg.threshold))
        .collect::<Result<Vec<f64>>>()?;
    let best = (0..preds.len())
        .min_by(|&a, &b| {
            dist[a]
                .total_cmp(&dist[b])
                .then(deltas[a].norm().total_cmp(&deltas[b].norm()))
                .then(a.cmp(&b))
        })
        .unwrap();
    Ok((best, dist[best]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Reached,
    MaxStep,
    Diverged,
    /// A baseline ended the episode on its own (single-shot methods, the
    /// heuristic's ray-miss rule). IRP never stops this way.
    Terminated,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Reached => "reached",
            StopReason::MaxStep => "max_step",
            StopReason::Diverged => "diverged",
            StopReason::Terminated => "terminated",
        }
    }
}

/// What the controller did after one execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub sigma: f64,
    pub deltas: Vec<Vec<f64>>,
    pub selected: usize,
    pub predicted_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    /// 0-based step.
    pub step: usize,
    pub action: Vec<f64>,
    pub trajectory: Trajectory,
    pub distance: f64,
    /// Absent on the last executed step.
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub goal: Goal,
    pub iterations: Vec<Iteration>,
    pub stop: StopReason,
    pub error: Option<String>,
}

impl EpisodeLog {
    pub fn distances(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.distance).collect()
    }

    pub fn actions(&self) -> Vec<Vec<f64>> {
        self.iterations.iter().map(|i| i.action.clone()).collect()
    }

    pub fn final_distance(&self) -> f64 {
        self.iterations.last().map_or(f64::INFINITY, |i| i.distance)
    }

    pub fn final_action(&self) -> Option<&[f64]> {
        self.iterations.last().map(|i| i.action.as_slice())
    }

    /// Distances padded to `len` steps by repeating the last one (a stopped
    /// controller keeps its final action).
    pub fn padded_distances(&self, len: usize) -> Vec<f64> {
        let d = self.distances();
        let last = d.last().copied().unwrap_or(f64::INFINITY);
        (0..len).map(|i| d.get(i).copied().unwrap_or(last)).collect()
    }

    /// One JSON object per iteration, the last line adding the stop reason.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (k, it) in self.iterations.iter().enumerate() {
            let mut v = serde_json::to_value(it).expect("iteration serializes");
            if k + 1 == self.iterations.len() {
                v["stop"] = serde_json::to_value(self.stop).unwrap();
                if let Some(e) = &self.error {
                    v["error"] = serde_json::Value::String(e.clone());
                }
            }
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_jsonl().as_bytes()))
            .map_err(|e| IrpError::io(path, e))
    }
}

/// Task metric of an executed trajectory.
pub fn measure(traj: &Trajectory, g: &Goal) -> Result<f64> {
    match g {
        Goal::Rope(_) => min_distance(traj, g),
        Goal::Cloth(_) => {
            let k = traj
                .final_keypoints
                .as_ref()
                .ok_or_else(|| IrpError::contract("cloth trajectory lacks final keypoints"))?;
            mean_keypoint_distance(k, g)
        }
    }
}

/// One IRP decision after observing `traj` from `action` at `step`.
pub fn irp_decide(
    pred: &dyn Predictor,
    action: &[f64],
    traj: &Trajectory,
    d_i: f64,
    g: &Goal,
    cfg: &IrpConfig,
    spec: &GridSpec,
    seed: u64,
    step: usize,
) -> Result<(Decision, Vec<f64>)> {
    pred.observe_executed(action, step);
    let observed = rasterize(traj, spec)?;
    let mut stream = RngStream::at(seed, "deltas", step as u64);
    let deltas = sample_deltas(d_i, action.len(), cfg, &mut stream);
    let preds = pred.predict_batch(&observed, &deltas)?;
    let (j, predicted) = select(&preds, &deltas, g, cfg)?;
    let next = apply_delta(action, &deltas[j])?;
    Ok((
        Decision {
            sigma: cfg.sigma(d_i),
            deltas: deltas.into_iter().map(|d| d.0).collect(),
            selected: j,
            predicted_distance: predicted,
        },
        next,
    ))
}

/// Runs the loop from `init` until the distance drops below `d_stop` or
/// `max_step` actions have been executed. A diverged simulation ends the
/// episode with the log so far.
pub fn run_episode(
    plant: &dyn Plant,
    g: &Goal,
    pred: &dyn Predictor,
    init: &[f64],
    cfg: &IrpConfig,
    spec: &GridSpec,
    seed: u64,
) -> Result<EpisodeLog> {
    cfg.validate()?;
    check_task(plant.task(), g, init)?;
    let mut log = EpisodeLog {
        goal: g.clone(),
        iterations: Vec::new(),
        stop: StopReason::MaxStep,
        error: None,
    };
    let mut action = init.to_vec();
    for step in 0..cfg.max_step {
        let traj = match plant.execute(&action, step) {
            Ok(t) => t,
            Err(e @ IrpError::Diverged { .. }) => {
                log.stop = StopReason::Diverged;
                log.error = Some(e.to_string());
                return Ok(log);
            }
            Err(e) => return Err(e),
        };
        let d = measure(&traj, g)?;
        log.iterations.push(Iteration {
            step,
            action: action.clone(),
            trajectory: traj,
            distance: d,
            decision: None,
        });
        if d < cfg.d_stop {
            log.stop = StopReason::Reached;
            return Ok(log);
        }
        if step + 1 == cfg.max_step {
            break;
        }
        let it = log.iterations.last_mut().unwrap();
        let (decision, next) = irp_decide(pred, &action, &it.trajectory, d, g, cfg, spec, seed, step)?;
        it.decision = Some(decision);
        action = next;
    }
    Ok(log)
}

pub(crate) fn check_task(task: Task, g: &Goal, init: &[f64]) -> Result<()> {
    if g.task() != task {
        return Err(IrpError::contract(format!("{} goal for a {task} plant", g.task())));
    }
    g.validate()?;
    check_unit_box(init, task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::SparseGrid;

    fn pred_at(spec: GridSpec, cell: Option<u32>) -> Prediction {
        Prediction {
            grid: SparseGrid::from_cells(spec, vec![cell.into_iter().collect()]),
            final_keypoints: None,
            trajectory: None,
            provenance: "test",
        }
    }

    #[test]
    fn sigma_rule() {
        let cfg = IrpConfig::default();
        assert!((cfg.sigma(0.3) - 0.15).abs() < 1e-15);
        assert_eq!(cfg.sigma(2.0), 0.25);
        assert_eq!(IrpConfig::const_sigma().sigma(0.01), 0.125);
        let mut s = RngStream::new(1, "d");
        assert!(sample_deltas(0.0, 3, &cfg, &mut s).iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn sampler_moments() {
        let cfg = IrpConfig {
            n_samples: 100_000,
            ..IrpConfig::default()
        };
        let mut s = RngStream::new(2, "moments");
        let d = sample_deltas(0.2, 3, &cfg, &mut s);
        for c in 0..3 {
            let xs: Vec<f64> = d.iter().map(|x| x.0[c]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            assert!((sd - 0.1).abs() / 0.1 < 0.02, "sd {sd}");
        }
    }

    #[test]
    fn selection_rules() {
        let spec = GridSpec::new(1);
        let cfg = IrpConfig::default();
        let g = Goal::Rope(spec.cell_center(100, 100));
        let on = 100 * 256 + 100;
        let far = 10 * 256 + 10;
        let dz = |x: f64| DeltaAction(vec![x, 0.0, 0.0]);
        assert_eq!(select(&[pred_at(spec, None)], &[dz(0.0)], &g, &cfg).unwrap().0, 0);
        let preds = [pred_at(spec, None), pred_at(spec, Some(far)), pred_at(spec, Some(on))];
        let deltas = [dz(0.0), dz(0.1), dz(0.2)];
        assert_eq!(select(&preds, &deltas, &g, &cfg).unwrap().0, 2);
        // equal distance: the smaller delta wins, then the lower index
        let preds = [pred_at(spec, Some(on)), pred_at(spec, Some(on)), pred_at(spec, Some(on))];
        let deltas = [dz(0.3), dz(-0.1), dz(0.1)];
        assert_eq!(select(&preds, &deltas, &g, &cfg).unwrap().0, 1);
        assert!(select(&[], &[], &g, &cfg).is_err());
    }
}
