//! Comparison methods behind one controller contract: propose the first
//! action for a goal, then the next action given what has been executed.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{apply_delta, DeltaAction, Task};
use crate::dataset::{Dataset, GridOptimum, Split};
use crate::error::{IrpError, Result};
use crate::irp::{check_task, irp_decide, measure, sample_deltas, Decision, EpisodeLog, Iteration, IrpConfig, StopReason};
use crate::predictor::{ModelBlob, Predictor};
use crate::raster::edt::squared_edt;
use crate::raster::{chamfer_cells, polyline_distance, resample_points, trajectory_cells, GridSpec};
use crate::rng::{derive_seed, RngStream};
use crate::sim::Plant;
use crate::trajectory::{Goal, Trajectory};

/// Next action chosen by a controller, with IRP's sampling record if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub action: Vec<f64>,
    pub decision: Option<Decision>,
}

impl Proposal {
    fn plain(action: Vec<f64>) -> Self {
        Proposal { action, decision: None }
    }
}

pub trait Controller: Send + Sync {
    fn name(&self) -> String;

    /// First action for a goal. System-identification methods may probe the
    /// plant here; probes do not count as episode steps.
    fn initial_action(&self, plant: &dyn Plant, g: &Goal, seed: u64) -> Result<Vec<f64>>;

    /// Action after the executed `history`; `None` ends the episode.
    fn next_action(&self, history: &[Iteration], g: &Goal, seed: u64) -> Result<Option<Proposal>>;
}

/// Drives any controller with the same execute/measure/stop rules as the
/// IRP loop.
pub fn run_controller(
    plant: &dyn Plant,
    ctrl: &dyn Controller,
    g: &Goal,
    max_step: usize,
    d_stop: f64,
    seed: u64,
) -> Result<EpisodeLog> {
    if max_step == 0 {
        return Err(IrpError::contract("max_step must be at least 1"));
    }
    let init = ctrl.initial_action(plant, g, seed)?;
    check_task(plant.task(), g, &init)?;
    let mut log = EpisodeLog {
        goal: g.clone(),
        iterations: Vec::new(),
        stop: StopReason::MaxStep,
        error: None,
    };
    let mut action = init;
    for step in 0..max_step {
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
        if d < d_stop {
            log.stop = StopReason::Reached;
            return Ok(log);
        }
        if step + 1 == max_step {
            break;
        }
        match ctrl.next_action(&log.iterations, g, seed)? {
            Some(p) => {
                log.iterations.last_mut().unwrap().decision = p.decision;
                action = p.action;
            }
            None => {
                log.stop = StopReason::Terminated;
                return Ok(log);
            }
        }
    }
    Ok(log)
}

/// How iterative methods pick their first action.
#[derive(Clone)]
pub enum InitRule {
    /// Grid action with the lowest mean distance over the training cells.
    Avg(Arc<Dataset>),
    Const(Vec<f64>),
}

impl InitRule {
    pub fn action(&self, g: &Goal) -> Result<Vec<f64>> {
        match self {
            InitRule::Avg(ds) => Ok(ds.avg_action(g)?.action),
            InitRule::Const(a) => Ok(a.clone()),
        }
    }

    /// Average action for ropes, the box center for cloth.
    pub fn default_for(ds: &Arc<Dataset>) -> Self {
        match ds.task {
            Task::Rope => InitRule::Avg(ds.clone()),
            Task::Cloth => InitRule::Const(vec![0.5; ds.task.action_dim()]),
        }
    }
}

/// IRP (and the constant-σ ablation) as a controller.
pub struct IrpController {
    pub pred: Arc<dyn Predictor>,
    pub cfg: IrpConfig,
    pub spec: GridSpec,
    pub init: InitRule,
}

impl Controller for IrpController {
    fn name(&self) -> String {
        if self.cfg.adaptive_sigma {
            "irp".into()
        } else {
            "const_sigma".into()
        }
    }

    fn initial_action(&self, _plant: &dyn Plant, g: &Goal, _seed: u64) -> Result<Vec<f64>> {
        self.init.action(g)
    }

    fn next_action(&self, history: &[Iteration], g: &Goal, seed: u64) -> Result<Option<Proposal>> {
        let last = history.last().ok_or_else(|| IrpError::contract("empty history"))?;
        let (decision, next) = irp_decide(
            self.pred.as_ref(),
            &last.action,
            &last.trajectory,
            last.distance,
            g,
            &self.cfg,
            &self.spec,
            seed,
            last.step,
        )?;
        Ok(Some(Proposal {
            action: next,
            decision: Some(decision),
        }))
    }
}

/// Executes one action and stops.
pub struct SingleShot {
    pub label: String,
    pub choose: Box<dyn Fn(&dyn Plant, &Goal) -> Result<Vec<f64>> + Send + Sync>,
}

impl Controller for SingleShot {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn initial_action(&self, plant: &dyn Plant, g: &Goal, _seed: u64) -> Result<Vec<f64>> {
        (self.choose)(plant, g)
    }

    fn next_action(&self, _h: &[Iteration], _g: &Goal, _seed: u64) -> Result<Option<Proposal>> {
        Ok(None)
    }
}

/// Best average training action, executed once.
pub fn avg_controller(ds: Arc<Dataset>) -> SingleShot {
    SingleShot {
        label: "avg".into(),
        choose: Box::new(move |_, g| Ok(ds.avg_action(g)?.action)),
    }
}

/// Brute-force optimum of the parameter cell nearest to the given
/// parameters.
pub fn sysid_gt(ds: &Dataset, params: (f64, f64), g: &Goal) -> Result<GridOptimum> {
    ds.brute_force_optimal(ds.params.nearest(params), g)
}

pub fn sysid_gt_controller(ds: Arc<Dataset>, params: (f64, f64)) -> SingleShot {
    SingleShot {
        label: "sysid_gt".into(),
        choose: Box::new(move |_, g| Ok(sysid_gt(&ds, params, g)?.action)),
    }
}

/// Training-world optimum for measured parameters; the evaluator executes
/// it once in whatever world it is running.
pub fn optsim(ds: &Dataset, measured: (f64, f64), g: &Goal) -> Result<GridOptimum> {
    sysid_gt(ds, measured, g)
}

pub fn optsim_controller(ds: Arc<Dataset>, measured: (f64, f64)) -> SingleShot {
    SingleShot {
        label: "optsim".into(),
        choose: Box::new(move |_, g| Ok(optsim(&ds, measured, g)?.action)),
    }
}

// ---------------------------------------------------------------------------
// Ridge regression

/// Ridge solution `W` of `X W ≈ Y`; columns flagged in `penalize` get the
/// `lambda` penalty, the others (bias) none.
pub fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, penalize: &[bool]) -> Result<DMatrix<f64>> {
    let mut a = x.transpose() * x;
    for (i, &p) in penalize.iter().enumerate() {
        // a tiny ridge on unpenalized columns keeps rank-deficient fits solvable
        a[(i, i)] += if p { lambda } else { 1e-12 * (1.0 + a[(i, i)]) };
    }
    let b = x.transpose() * y;
    match a.clone().cholesky() {
        Some(c) => Ok(c.solve(&b)),
        None => a
            .lu()
            .solve(&b)
            .ok_or_else(|| IrpError::contract("singular ridge system")),
    }
}

// ---------------------------------------------------------------------------
// SysID

/// Radical-inverse low-discrepancy points in `[0,1]^dim`.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 4] = [2, 3, 5, 7];
    (0..dim)
        .map(|d| {
            let b = PRIMES[d];
            let (mut f, mut r, mut i) = (1.0, 0.0, index);
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

/// 16 distinct grid actions from the Halton sequence.
pub fn probe_actions(ds: &Dataset, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(n);
    let mut i = 1;
    while out.len() < n.min(ds.n_actions()) {
        let a = ds.actions.nearest(&halton(i, ds.actions.dim()));
        if !out.contains(&a) {
            out.push(a);
        }
        i += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysIdModel {
    pub probes: Vec<usize>,
    /// Training cells used as feature references and lookup targets.
    pub train: Vec<usize>,
    /// `(1 + 16·|train|) × 2` ridge weights onto axis-normalized parameters.
    pub weights: Vec<f64>,
    pub lambda: f64,
}

pub const N_PROBES: usize = 16;

fn sysid_features(ds: &Dataset, probes: &[usize], train: &[usize], cells: &[Vec<Vec<u32>>]) -> Vec<f64> {
    let spec = ds.grid_spec;
    let mut f = vec![1.0];
    for (j, &a) in probes.iter().enumerate() {
        for &m in train {
            let rec = ds.record(m, a, 0);
            let d = if rec.valid {
                let refc = trajectory_cells(&rec.to_trajectory(), &spec);
                (0..spec.channels)
                    .map(|c| chamfer_cells(&cells[j][c], &refc[c], spec.width, spec.height))
                    .sum::<f64>()
                    / spec.channels as f64
                    * spec.cell_size()
            } else {
                0.0
            };
            f.push(if d.is_finite() { d } else { 10.0 });
        }
    }
    f
}

impl SysIdModel {
    /// Fits the probe-feature → parameter regression on the training cells.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let train = ds.train_cells()?;
        if train.len() < 4 {
            return Err(IrpError::contract("sysid needs at least 4 training cells"));
        }
        let probes = probe_actions(ds, N_PROBES);
        let rows: Vec<Vec<f64>> = train
            .par_iter()
            .map(|&p| {
                let cells: Vec<Vec<Vec<u32>>> = probes
                    .iter()
                    .map(|&a| trajectory_cells(&ds.record(p, a, 0).to_trajectory(), &ds.grid_spec))
                    .collect();
                sysid_features(ds, &probes, &train, &cells)
            })
            .collect();
        let nf = rows[0].len();
        let x = DMatrix::from_fn(rows.len(), nf, |i, j| rows[i][j]);
        let [b0, b1] = ds.params.bounds();
        let y = DMatrix::from_fn(train.len(), 2, |i, j| {
            let v = ds.params.values(train[i]);
            if j == 0 {
                (v.0 - b0.0) / (b0.1 - b0.0)
            } else {
                (v.1 - b1.0) / (b1.1 - b1.0)
            }
        });
        let scale = (x.transpose() * &x).trace() / nf as f64;
        let lambda = 1e-8 * scale;
        let mut penalize = vec![true; nf];
        penalize[0] = false;
        let w = ridge(&x, &y, lambda, &penalize)?;
        Ok(SysIdModel {
            probes,
            train,
            weights: w.as_slice().to_vec(),
            lambda,
        })
    }

    /// Parameter estimate from observed probe trajectories, clipped to the
    /// grid's bounding box.
    pub fn estimate(&self, ds: &Dataset, probe_trajs: &[Trajectory]) -> (f64, f64) {
        let cells: Vec<Vec<Vec<u32>>> = probe_trajs
            .iter()
            .map(|t| trajectory_cells(t, &ds.grid_spec))
            .collect();
        let f = sysid_features(ds, &self.probes, &self.train, &cells);
        let w = DMatrix::from_column_slice(f.len(), 2, &self.weights);
        let est = DVector::from_vec(f).transpose() * w;
        let [b0, b1] = ds.params.bounds();
        (
            b0.0 + est[0].clamp(0.0, 1.0) * (b0.1 - b0.0),
            b1.0 + est[1].clamp(0.0, 1.0) * (b1.1 - b1.0),
        )
    }

    /// Training cell nearest to the estimate.
    pub fn nearest_train(&self, ds: &Dataset, est: (f64, f64)) -> usize {
        let [b0, b1] = ds.params.bounds();
        let n = |x: f64, b: (f64, f64)| (x - b.0) / (b.1 - b.0);
        *self
            .train
            .iter()
            .min_by(|&&a, &&b| {
                let d = |p: usize| {
                    let v = ds.params.values(p);
                    (n(v.0, b0) - n(est.0, b0)).powi(2) + (n(v.1, b1) - n(est.1, b1)).powi(2)
                };
                d(a).total_cmp(&d(b)).then(a.cmp(&b))
            })
            .unwrap()
    }

    /// Action for a goal given observed probe trajectories.
    pub fn action(&self, ds: &Dataset, probe_trajs: &[Trajectory], g: &Goal) -> Result<GridOptimum> {
        let est = self.estimate(ds, probe_trajs);
        ds.brute_force_optimal(self.nearest_train(ds, est), g)
    }

    pub fn to_blob(&self) -> ModelBlob {
        ModelBlob::new(
            "sysid",
            serde_json::to_value(self).expect("sysid model serializes"),
            Vec::new(),
        )
    }

    pub fn from_blob(blob: &ModelBlob) -> Result<Self> {
        blob.expect_tag("sysid")?;
        serde_json::from_value(blob.hyper.clone()).map_err(|e| IrpError::format(format!("sysid model: {e}")))
    }
}

/// Step offset for probe executions, keeping their seeds apart from the
/// episode's steps.
const PROBE_STEP_BASE: usize = 1_000_000;

pub struct SysIdController {
    pub ds: Arc<Dataset>,
    pub model: Arc<SysIdModel>,
}

impl Controller for SysIdController {
    fn name(&self) -> String {
        "sysid".into()
    }

    fn initial_action(&self, plant: &dyn Plant, g: &Goal, _seed: u64) -> Result<Vec<f64>> {
        let trajs = self
            .model
            .probes
            .iter()
            .enumerate()
            .map(|(j, &a)| plant.execute(&self.ds.actions.action(a), PROBE_STEP_BASE + j))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.model.action(&self.ds, &trajs, g)?.action)
    }

    fn next_action(&self, _h: &[Iteration], _g: &Goal, _seed: u64) -> Result<Option<Proposal>> {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// iterHeuristic

#[derive(Debug, Clone, PartialEq)]
pub enum HeuristicStep {
    Next(Vec<f64>),
    /// The trajectory misses the ray from the origin through the goal.
    Terminate,
}

fn segments_cross(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    // parameter along a→b of the intersection with p→q
    let r = [q[0] - p[0], q[1] - p[1]];
    let s = [b[0] - a[0], b[1] - a[1]];
    let den = r[0] * s[1] - r[1] * s[0];
    if den.abs() < 1e-15 {
        return None;
    }
    let ap = [a[0] - p[0], a[1] - p[1]];
    let t = (ap[0] * s[1] - ap[1] * s[0]) / den;
    let u = (ap[0] * r[1] - ap[1] * r[0]) / den;
    ((0.0..=1.0).contains(&t) && u >= 0.0).then_some(u)
}

/// Rope heuristic: if the tip path crosses the origin–goal segment (falls
/// short) both speed and swing amplitude grow by `gain·d_i`; if it only
/// crosses the ray beyond the goal (overshoots) they shrink; if it misses
/// the ray entirely the episode terminates. Amplitude is the excursion of
/// (j2, j3) from the home pose, which is the upper corner of both joint
/// boxes, so growing it lowers both normalized joint targets.
pub fn heuristic_step(traj: &Trajectory, g: &Goal, a_norm: &[f64], gain: f64) -> Result<HeuristicStep> {
    let goal = g.rope_point()?;
    let pts = traj.points(0);
    let d = polyline_distance(&pts, goal);
    if d == 0.0 {
        return Ok(HeuristicStep::Next(a_norm.to_vec()));
    }
    let origin = [0.0, 0.0];
    let mut crosses: Vec<f64> = Vec::new();
    for w in pts.windows(2) {
        if let Some(u) = segments_cross(w[0], w[1], origin, goal) {
            crosses.push(u);
        }
    }
    if crosses.is_empty() {
        return Ok(HeuristicStep::Terminate);
    }
    let short = crosses.iter().any(|&u| u <= 1.0);
    let s = if short { gain * d } else { -gain * d };
    let next = apply_delta(a_norm, &DeltaAction(vec![s, -s, -s]))?;
    Ok(HeuristicStep::Next(next))
}

/// Cloth heuristic: every normalized action component moves by `gain`
/// times the Y error between the goal and the settled keypoint centroids,
/// up when the cloth lands short of the goal and down when it lands beyond.
pub fn cloth_heuristic_step(final_kp: &[[f64; 2]], g: &Goal, a_norm: &[f64], gain: f64) -> Result<Vec<f64>> {
    let target = g.cloth_keypoints()?;
    let cy = |k: &[[f64; 2]]| k.iter().map(|p| p[0]).sum::<f64>() / k.len().max(1) as f64;
    let step = gain * (cy(target) - cy(final_kp));
    apply_delta(a_norm, &DeltaAction(vec![step; a_norm.len()]))
}

pub struct HeuristicController {
    pub init: InitRule,
    pub gain: f64,
}

impl Controller for HeuristicController {
    fn name(&self) -> String {
        "iter_heuristic".into()
    }

    fn initial_action(&self, _plant: &dyn Plant, g: &Goal, _seed: u64) -> Result<Vec<f64>> {
        self.init.action(g)
    }

    fn next_action(&self, history: &[Iteration], g: &Goal, _seed: u64) -> Result<Option<Proposal>> {
        let last = history.last().ok_or_else(|| IrpError::contract("empty history"))?;
        match g {
            Goal::Rope(_) => match heuristic_step(&last.trajectory, g, &last.action, self.gain)? {
                HeuristicStep::Next(a) => Ok(Some(Proposal::plain(a))),
                HeuristicStep::Terminate => Ok(None),
            },
            Goal::Cloth(_) => {
                let kp = last
                    .trajectory
                    .final_keypoints
                    .as_ref()
                    .ok_or_else(|| IrpError::contract("cloth trajectory lacks keypoints"))?;
                Ok(Some(Proposal::plain(cloth_heuristic_step(kp, g, &last.action, self.gain)?)))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// iterLinear

pub const LINEAR_POINTS: usize = 64;

/// Linear plant model from `[a, 1]` to the resampled tip polyline.
pub struct LinearModel {
    w: DMatrix<f64>,
}

impl LinearModel {
    pub fn fit(history: &[(Vec<f64>, Vec<[f64; 2]>)], lambda: f64) -> Result<Self> {
        let n = history.len();
        if n == 0 {
            return Err(IrpError::contract("linear model needs at least one observation"));
        }
        let na = history[0].0.len();
        let x = DMatrix::from_fn(n, na + 1, |i, j| if j < na { history[i].0[j] } else { 1.0 });
        let m = history[0].1.len() * 2;
        let y = DMatrix::from_fn(n, m, |i, j| history[i].1[j / 2][j % 2]);
        let mut penalize = vec![true; na + 1];
        penalize[na] = false;
        Ok(LinearModel {
            w: ridge(&x, &y, lambda, &penalize)?,
        })
    }

    pub fn predict(&self, a: &[f64]) -> Vec<[f64; 2]> {
        let mut xa = a.to_vec();
        xa.push(1.0);
        let y = DVector::from_vec(xa).transpose() * &self.w;
        y.as_slice().chunks_exact(2).map(|c| [c[0], c[1]]).collect()
    }
}

pub struct IterLinearController {
    pub init: InitRule,
    pub cfg: IrpConfig,
    pub lambda: f64,
}

/// One iterLinear proposal: refit on all history, then take the sampled
/// candidate whose predicted polyline comes closest to the goal (ties to
/// the lower sample index).
pub fn iterlinear_step(history: &[(Vec<f64>, Trajectory)], g: &Goal, cfg: &IrpConfig, lambda: f64, stream: &mut RngStream) -> Result<Vec<f64>> {
    let goal = g.rope_point()?;
    let (last_a, last_t) = history.last().ok_or_else(|| IrpError::contract("empty history"))?;
    let data = history
        .iter()
        .map(|(a, t)| Ok((a.clone(), resample_points(&t.points(0), LINEAR_POINTS)?)))
        .collect::<Result<Vec<_>>>()?;
    let model = LinearModel::fit(&data, lambda)?;
    let d_i = polyline_distance(&last_t.points(0), goal);
    let deltas = sample_deltas(d_i, last_a.len(), cfg, stream);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for d in &deltas {
        let cand = apply_delta(last_a, d)?;
        let dist = polyline_distance(&model.predict(&cand), goal);
        if best.as_ref().is_none_or(|b| dist < b.0) {
            best = Some((dist, cand));
        }
    }
    Ok(best.unwrap().1)
}

impl Controller for IterLinearController {
    fn name(&self) -> String {
        "iter_linear".into()
    }

    fn initial_action(&self, plant: &dyn Plant, g: &Goal, _seed: u64) -> Result<Vec<f64>> {
        if plant.task() != Task::Rope {
            return Err(IrpError::contract("iterLinear is defined for the rope task only"));
        }
        self.init.action(g)
    }

    fn next_action(&self, history: &[Iteration], g: &Goal, seed: u64) -> Result<Option<Proposal>> {
        let h: Vec<(Vec<f64>, Trajectory)> = history
            .iter()
            .map(|i| (i.action.clone(), i.trajectory.clone()))
            .collect();
        let step = history.last().map_or(0, |i| i.step);
        let mut stream = RngStream::at(seed, "iterlinear", step as u64);
        Ok(Some(Proposal::plain(iterlinear_step(&h, g, &self.cfg, self.lambda, &mut stream)?)))
    }
}

// ---------------------------------------------------------------------------
// DeltaReg

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRegConfig {
    pub goals_per_cell: usize,
    pub starts_per_goal: usize,
    pub k: usize,
    pub gain: f64,
    /// Weight of goal distance against trajectory chamfer in neighbour
    /// matching (both in meters).
    pub goal_weight: f64,
    pub shortlist: usize,
    pub seed: u64,
}

impl Default for DeltaRegConfig {
    fn default() -> Self {
        DeltaRegConfig {
            goals_per_cell: 32,
            starts_per_goal: 8,
            k: 5,
            gain: 1.0,
            goal_weight: 1.0,
            shortlist: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRegEntry {
    pub param_idx: usize,
    pub action_idx: usize,
    pub goal: Goal,
    pub delta: Vec<f64>,
}

/// Table from (observed trajectory, goal) to the brute-force optimal delta.
pub struct DeltaRegModel {
    pub cfg: DeltaRegConfig,
    pub entries: Vec<DeltaRegEntry>,
    spec: GridSpec,
    /// On-cells per distinct (param, action) key.
    cells: HashMap<(usize, usize), Vec<Vec<u32>>>,
}

impl DeltaRegModel {
    pub fn fit(ds: &Dataset, cfg: DeltaRegConfig) -> Result<Self> {
        let train = ds.train_cells()?;
        let per_cell: Vec<Vec<DeltaRegEntry>> = train
            .par_iter()
            .map(|&p| -> Result<Vec<DeltaRegEntry>> {
                let goals = ds.sample_goals(p, cfg.goals_per_cell, derive_seed(cfg.seed, &[1]))?;
                let mut rng = RngStream::new(derive_seed(cfg.seed, &[2, p as u64]), "deltareg-starts");
                let mut out = Vec::new();
                for g in goals {
                    let opt = ds.brute_force_optimal(p, &g)?;
                    for _ in 0..cfg.starts_per_goal {
                        let a = rng.index(ds.n_actions());
                        if !ds.record(p, a, 0).valid {
                            continue;
                        }
                        let cur = ds.actions.action(a);
                        out.push(DeltaRegEntry {
                            param_idx: p,
                            action_idx: a,
                            goal: g.clone(),
                            delta: opt.action.iter().zip(&cur).map(|(x, y)| x - y).collect(),
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(ds, cfg, per_cell.into_iter().flatten().collect())
    }

    pub fn from_entries(ds: &Dataset, cfg: DeltaRegConfig, entries: Vec<DeltaRegEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(IrpError::contract("deltareg table is empty"));
        }
        let mut keys: Vec<(usize, usize)> = entries.iter().map(|e| (e.param_idx, e.action_idx)).collect();
        keys.sort_unstable();
        keys.dedup();
        let spec = ds.grid_spec;
        let cells = keys
            .par_iter()
            .map(|&(p, a)| ((p, a), trajectory_cells(&ds.record(p, a, 0).to_trajectory(), &spec)))
            .collect();
        Ok(DeltaRegModel {
            cfg,
            entries,
            spec,
            cells,
        })
    }

    /// Gain-free mean delta of the `k` nearest table entries.
    pub fn query(&self, observed: &Trajectory, g: &Goal) -> Result<Vec<f64>> {
        let spec = self.spec;
        let obs = trajectory_cells(observed, &spec);
        let dist: Vec<Vec<f64>> = obs
            .iter()
            .map(|c| {
                squared_edt(c.iter().map(|&i| i as usize), spec.height, spec.width)
                    .map(|d| d.into_iter().map(f64::sqrt).collect())
                    .ok_or_else(|| IrpError::contract("observed trajectory is empty"))
            })
            .collect::<Result<_>>()?;
        let nc = spec.channels as f64;
        let cs = spec.cell_size();
        let coarse_traj: HashMap<(usize, usize), f64> = self
            .cells
            .iter()
            .map(|(&k, cells)| {
                let s: f64 = cells
                    .iter()
                    .zip(&dist)
                    .map(|(c, d)| {
                        if c.is_empty() {
                            f64::INFINITY
                        } else {
                            c.iter().map(|&j| d[j as usize]).sum::<f64>() / c.len() as f64
                        }
                    })
                    .sum();
                (k, s / nc * cs)
            })
            .collect();
        let gw = self.cfg.goal_weight;
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (coarse_traj[&(e.param_idx, e.action_idx)] + gw * g.distance_to(&e.goal), i))
            .collect();
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let keep = self.cfg.shortlist.max(self.cfg.k).min(scored.len());
        if keep < scored.len() {
            scored.select_nth_unstable_by(keep - 1, by);
            scored.truncate(keep);
        }
        let mut fine: Vec<(f64, usize)> = scored
            .iter()
            .map(|&(_, i)| {
                let e = &self.entries[i];
                let c = &self.cells[&(e.param_idx, e.action_idx)];
                let ch: f64 = c
                    .iter()
                    .zip(&obs)
                    .map(|(a, b)| chamfer_cells(a, b, spec.width, spec.height))
                    .sum::<f64>()
                    / nc
                    * cs;
                (ch + gw * g.distance_to(&e.goal), i)
            })
            .collect();
        fine.sort_by(by);
        fine.truncate(self.cfg.k);
        let na = self.entries[0].delta.len();
        let mut mean = vec![0.0; na];
        for &(_, i) in &fine {
            for (m, d) in mean.iter_mut().zip(&self.entries[i].delta) {
                *m += d / fine.len() as f64;
            }
        }
        Ok(mean)
    }

    /// Next action: current action plus gain times the regressed delta.
    pub fn step(&self, observed: &Trajectory, g: &Goal, a_norm: &[f64]) -> Result<Vec<f64>> {
        let d = self.query(observed, g)?;
        apply_delta(a_norm, &DeltaAction(d.iter().map(|x| x * self.cfg.gain).collect()))
    }

    pub fn to_blob(&self) -> ModelBlob {
        ModelBlob::new(
            "deltareg",
            serde_json::json!({"config": self.cfg, "entries": self.entries}),
            Vec::new(),
        )
    }

    pub fn from_blob(blob: &ModelBlob, ds: &Dataset) -> Result<Self> {
        blob.expect_tag("deltareg")?;
        let cfg = serde_json::from_value(blob.hyper["config"].clone())
            .map_err(|e| IrpError::format(format!("deltareg config: {e}")))?;
        let entries = serde_json::from_value(blob.hyper["entries"].clone())
            .map_err(|e| IrpError::format(format!("deltareg entries: {e}")))?;
        Self::from_entries(ds, cfg, entries)
    }
}

pub struct DeltaRegController {
    pub model: Arc<DeltaRegModel>,
    pub init: InitRule,
}

impl Controller for DeltaRegController {
    fn name(&self) -> String {
        "deltareg".into()
    }

    fn initial_action(&self, _plant: &dyn Plant, g: &Goal, _seed: u64) -> Result<Vec<f64>> {
        self.init.action(g)
    }

    fn next_action(&self, history: &[Iteration], g: &Goal, _seed: u64) -> Result<Option<Proposal>> {
        let last = history.last().ok_or_else(|| IrpError::contract("empty history"))?;
        Ok(Some(Proposal::plain(self.model.step(&last.trajectory, g, &last.action)?)))
    }
}

/// Parameter values of the cells in a split (handy for SysID_GT/OptSim).
pub fn split_params(ds: &Dataset, split: Split) -> Vec<(usize, (f64, f64))> {
    ds.cells(split).into_iter().map(|p| (p, ds.params.values(p))).collect()
}
