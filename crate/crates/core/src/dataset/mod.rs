//! Offline sweeps over (object parameters × action grid × repeats), their
//! splits, and the brute-force oracles evaluated on them.

mod io;

pub use io::{file_hash, hash_hex, sha256_hex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ClothAction, ClothActionBox, RopeAction, Task};
use crate::error::{IrpError, Result};
use crate::params::{ClothParams, RopeParams, WorldVariant};
use crate::raster::{polyline_distance, GridSpec};
use crate::rng::{derive_seed, RngStream};
use crate::sim::{execute_swing, execute_whip};
use crate::trajectory::{Goal, TrackPoint, Trajectory, WINDOW_HALF_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    TestInterp,
    TestExtrap,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Train,
        Split::Validation,
        Split::TestInterp,
        Split::TestExtrap,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Split::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| IrpError::format(format!("unknown split id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::TestInterp => "test_interp",
            Split::TestExtrap => "test_extrap",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = IrpError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| IrpError::contract(format!("unknown split '{s}'")))
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Regular grid over the normalized action box; dimension 0 varies slowest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub dims: Vec<usize>,
}

impl ActionGrid {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&n| n < 2) {
            return Err(IrpError::contract(format!(
                "action grid needs at least 2 samples per axis, got {dims:?}"
            )));
        }
        Ok(ActionGrid { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalized value of sample `i` along axis `d`.
    pub fn value(&self, d: usize, i: usize) -> f64 {
        i as f64 / (self.dims[d] - 1) as f64
    }

    pub fn step(&self, d: usize) -> f64 {
        1.0 / (self.dims[d] - 1) as f64
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.dims.len()];
        for d in (0..self.dims.len()).rev() {
            c[d] = idx % self.dims[d];
            idx /= self.dims[d];
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &n)| acc * n + c.min(n - 1))
    }

    pub fn action(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.value(d, i))
            .collect()
    }

    /// Grid action nearest to a normalized action (clamped to the box).
    pub fn nearest(&self, a_norm: &[f64]) -> usize {
        let c: Vec<usize> = a_norm
            .iter()
            .zip(&self.dims)
            .map(|(&u, &n)| (u.clamp(0.0, 1.0) * (n - 1) as f64).round() as usize)
            .collect();
        self.index(&c)
    }
}

/// Two-axis parameter grid: (length, linear density) for ropes and
/// (size, area density) for cloth. Cell index is `i0 · len(axis1) + i1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub axis0: Vec<f64>,
    pub axis1: Vec<f64>,
}

impl ParamGrid {
    pub fn linspace(r0: (f64, f64), n0: usize, r1: (f64, f64), n1: usize) -> Result<Self> {
        if n0 < 2 || n1 < 2 {
            return Err(IrpError::contract(format!(
                "parameter grid needs at least 2 samples per axis, got {n0}×{n1}"
            )));
        }
        let lin = |r: (f64, f64), n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Ok(ParamGrid {
            axis0: lin(r0, n0),
            axis1: lin(r1, n1),
        })
    }

    pub fn len(&self) -> usize {
        self.axis0.len() * self.axis1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.axis0.len(), self.axis1.len())
    }

    pub fn coords(&self, p: usize) -> (usize, usize) {
        (p / self.axis1.len(), p % self.axis1.len())
    }

    pub fn values(&self, p: usize) -> (f64, f64) {
        let (i, j) = self.coords(p);
        (self.axis0[i], self.axis1[j])
    }

    pub fn bounds(&self) -> [(f64, f64); 2] {
        let b = |a: &[f64]| (a[0], a[a.len() - 1]);
        [b(&self.axis0), b(&self.axis1)]
    }

    /// Cell whose values are nearest in axis-normalized coordinates.
    pub fn nearest(&self, v: (f64, f64)) -> usize {
        let [b0, b1] = self.bounds();
        let scale = |x: f64, b: (f64, f64)| (x - b.0) / (b.1 - b.0);
        (0..self.len())
            .min_by(|&a, &b| {
                let d = |p: usize| {
                    let (x, y) = self.values(p);
                    (scale(x, b0) - scale(v.0, b0)).powi(2) + (scale(y, b1) - scale(v.1, b1)).powi(2)
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap_or(0)
    }
}

/// Object settings shared by every parameter cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Template {
    Rope { n_links: usize, joint_damping: f64 },
    Cloth { n_grid: usize, action_box: ClothActionBox },
}

impl Template {
    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Rope => Template::Rope {
                n_links: RopeParams::DEFAULT_LINKS,
                joint_damping: RopeParams::DEFAULT_JOINT_DAMPING,
            },
            Task::Cloth => Template::Cloth {
                n_grid: ClothParams::DESK_GRID,
                action_box: ClothActionBox::default(),
            },
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Template::Rope { .. } => Task::Rope,
            Template::Cloth { .. } => Task::Cloth,
        }
    }
}

/// Simulated trajectory stored in single precision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Record {
    pub valid: bool,
    /// Per track `(t, y, z)` samples.
    pub tracks: Vec<Vec<[f32; 3]>>,
    pub final_keypoints: Option<Vec<[f32; 2]>>,
}

impl Record {
    pub fn invalid() -> Self {
        Record::default()
    }

    pub fn from_trajectory(t: &Trajectory) -> Self {
        Record {
            valid: true,
            tracks: t
                .tracks
                .iter()
                .map(|tr| {
                    tr.iter()
                        .map(|p| [p.t as f32, p.y as f32, p.z as f32])
                        .collect()
                })
                .collect(),
            final_keypoints: t
                .final_keypoints
                .as_ref()
                .map(|k| k.iter().map(|p| [p[0] as f32, p[1] as f32]).collect()),
        }
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            tracks: self
                .tracks
                .iter()
                .map(|tr| {
                    tr.iter()
                        .map(|p| TrackPoint {
                            t: p[0] as f64,
                            y: p[1] as f64,
                            z: p[2] as f64,
                        })
                        .collect()
                })
                .collect(),
            final_keypoints: self.final_keypoints.as_ref().map(|k| {
                k.iter().map(|p| [p[0] as f64, p[1] as f64]).collect()
            }),
        }
    }

    pub fn points(&self, track: usize) -> Vec<[f64; 2]> {
        self.tracks[track]
            .iter()
            .map(|p| [p[1] as f64, p[2] as f64])
            .collect()
    }

    pub fn keypoints(&self) -> Option<Vec<[f64; 2]>> {
        self.final_keypoints
            .as_ref()
            .map(|k| k.iter().map(|p| [p[0] as f64, p[1] as f64]).collect())
    }

    /// Task metric against a goal; `+∞` for invalid records.
    pub fn distance(&self, g: &Goal) -> f64 {
        if !self.valid {
            return f64::INFINITY;
        }
        match g {
            Goal::Rope(p) => polyline_distance(&self.points(0), *p),
            Goal::Cloth(target) => match &self.final_keypoints {
                Some(k) if k.len() == target.len() => {
                    k.iter()
                        .zip(target)
                        .map(|(a, b)| (a[0] as f64 - b[0]).hypot(a[1] as f64 - b[1]))
                        .sum::<f64>()
                        / target.len() as f64
                }
                _ => f64::INFINITY,
            },
        }
    }
}

/// Everything needed to generate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub task: Task,
    pub params: ParamGrid,
    pub action_dims: Vec<usize>,
    pub repeats: usize,
    pub world: WorldVariant,
    pub template: Template,
    pub grid_spec: GridSpec,
    pub seed: u64,
}

impl GenConfig {
    pub const ROPE_LENGTH: (f64, f64) = (0.75, 1.25);
    pub const ROPE_DENSITY: (f64, f64) = (0.01, 0.08);
    /// Perturbation between repeats of the same rope cell, rad.
    pub const ROPE_REPEAT_NOISE: f64 = 0.01;

    /// Desk-scale defaults: rope 8×8 params × 9³ actions × 3 repeats; cloth
    /// 6×6 params × 6³×4 actions × 1 repeat.
    pub fn desk(task: Task, seed: u64) -> Self {
        match task {
            Task::Rope => GenConfig {
                task,
                params: ParamGrid::linspace(Self::ROPE_LENGTH, 8, Self::ROPE_DENSITY, 8).unwrap(),
                action_dims: vec![9, 9, 9],
                repeats: 3,
                world: WorldVariant::training().with_noise(Self::ROPE_REPEAT_NOISE),
                template: Template::default_for(task),
                grid_spec: GridSpec::new(1),
                seed,
            },
            Task::Cloth => GenConfig {
                task,
                params: ParamGrid::linspace(
                    ClothParams::SIZE_RANGE,
                    6,
                    ClothParams::DENSITY_RANGE,
                    6,
                )
                .unwrap(),
                action_dims: vec![6, 6, 6, 4],
                repeats: 1,
                world: WorldVariant::training(),
                template: Template::default_for(task),
                grid_spec: GridSpec::new(9),
                seed,
            },
        }
    }

    pub fn with_param_dims(mut self, n0: usize, n1: usize) -> Result<Self> {
        let [b0, b1] = self.params.bounds();
        self.params = ParamGrid::linspace(b0, n0, b1, n1)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ActionGrid::new(self.action_dims.clone())?;
        if self.action_dims.len() != self.task.action_dim() {
            return Err(IrpError::contract(format!(
                "{} action grid needs {} axes",
                self.task,
                self.task.action_dim()
            )));
        }
        if self.params.axis0.len() < 2 || self.params.axis1.len() < 2 {
            return Err(IrpError::contract("parameter grid needs at least 2×2 cells"));
        }
        if self.repeats == 0 || self.repeats > u16::MAX as usize {
            return Err(IrpError::contract("repeats must be in 1..=65535"));
        }
        if self.template.task() != self.task || self.grid_spec.channels != self.task.n_tracks() {
            return Err(IrpError::contract("template or grid spec does not match the task"));
        }
        self.grid_spec.validate()?;
        self.world.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub grid_spec: GridSpec,
    pub params: ParamGrid,
    pub actions: ActionGrid,
    pub repeats: usize,
    pub world: WorldVariant,
    pub template: Template,
    pub seed: u64,
    /// Indexed by [`Dataset::record_index`].
    pub records: Vec<Record>,
    /// One label per parameter cell, once assigned.
    pub splits: Option<Vec<Split>>,
}

/// Result of an exhaustive search over the action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub action_idx: usize,
    pub action: Vec<f64>,
    pub distance: f64,
}

/// A goal drawn from a stored trajectory, with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledGoal {
    pub goal: Goal,
    pub param_idx: usize,
    pub action_idx: usize,
    pub repeat: usize,
}

/// Seed of one dataset cell.
pub fn record_seed(seed: u64, p: usize, a: usize, r: usize) -> u64 {
    derive_seed(seed, &[p as u64, a as u64, r as u64])
}

/// Simulates every (param, action, repeat) cell. Cells whose simulation
/// fails are logged and stored as invalid.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let actions = ActionGrid::new(cfg.action_dims.clone())?;
    let mut ds = Dataset {
        task: cfg.task,
        grid_spec: cfg.grid_spec,
        params: cfg.params.clone(),
        actions,
        repeats: cfg.repeats,
        world: cfg.world,
        template: cfg.template.clone(),
        seed: cfg.seed,
        records: Vec::new(),
        splits: None,
    };
    let n = ds.n_records();
    let records: Vec<Record> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (p, a, r) = ds.decode_index(i);
            match ds.simulate(p, &ds.actions.action(a), record_seed(cfg.seed, p, a, r)) {
                Ok(t) => Record::from_trajectory(&t),
                Err(e) => {
                    log::warn!("cell (param {p}, action {a}, repeat {r}) invalid: {e}");
                    Record::invalid()
                }
            }
        })
        .collect();
    ds.records = records;
    let invalid = ds.records.iter().filter(|r| !r.valid).count();
    if invalid > 0 {
        log::warn!("{invalid} of {n} dataset cells failed to simulate");
    }
    Ok(ds)
}

impl Dataset {
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_records(&self) -> usize {
        self.n_params() * self.n_actions() * self.repeats
    }

    pub fn record_index(&self, p: usize, a: usize, r: usize) -> usize {
        (p * self.n_actions() + a) * self.repeats + r
    }

    pub fn decode_index(&self, i: usize) -> (usize, usize, usize) {
        let r = i % self.repeats;
        let pa = i / self.repeats;
        (pa / self.n_actions(), pa % self.n_actions(), r)
    }

    pub fn record(&self, p: usize, a: usize, r: usize) -> &Record {
        &self.records[self.record_index(p, a, r)]
    }

    pub fn trajectory(&self, p: usize, a: usize, r: usize) -> Trajectory {
        self.record(p, a, r).to_trajectory()
    }

    pub fn action_box(&self) -> ClothActionBox {
        match &self.template {
            Template::Cloth { action_box, .. } => *action_box,
            Template::Rope { .. } => ClothActionBox::default(),
        }
    }

    pub fn rope_params(&self, p: usize) -> Result<RopeParams> {
        match self.template {
            Template::Rope {
                n_links,
                joint_damping,
            } => {
                let (length, lin_density) = self.params.values(p);
                Ok(RopeParams {
                    n_links,
                    joint_damping,
                    ..RopeParams::new(length, lin_density)
                })
            }
            Template::Cloth { .. } => Err(IrpError::contract("not a rope dataset")),
        }
    }

    pub fn cloth_params(&self, p: usize) -> Result<ClothParams> {
        match self.template {
            Template::Cloth { n_grid, .. } => {
                let (size, area_density) = self.params.values(p);
                Ok(ClothParams {
                    size,
                    area_density,
                    n_grid,
                })
            }
            Template::Rope { .. } => Err(IrpError::contract("not a cloth dataset")),
        }
    }

    /// Runs the dataset's simulator on parameter cell `p`.
    pub fn simulate(&self, p: usize, a_norm: &[f64], seed: u64) -> Result<Trajectory> {
        match self.task {
            Task::Rope => {
                let action = RopeAction::denormalize(a_norm)?;
                execute_whip(&self.rope_params(p)?, &action, &self.world, seed)
            }
            Task::Cloth => {
                let bx = self.action_box();
                let action = ClothAction::denormalize(a_norm, &bx)?;
                execute_swing(&self.cloth_params(p)?, &action, &bx, &self.world, seed)
            }
        }
    }

    pub fn split_of(&self, p: usize) -> Option<Split> {
        self.splits.as_ref().map(|s| s[p])
    }

    /// Parameter cells carrying a split label, in index order.
    pub fn cells(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..s.len()).filter(|&p| s[p] == split).collect(),
            None => Vec::new(),
        }
    }

    fn require_splits(&self) -> Result<&[Split]> {
        self.splits
            .as_deref()
            .ok_or_else(|| IrpError::contract("dataset splits are not assigned"))
    }

    /// Task metric of one stored record; `+∞` when invalid.
    pub fn distance(&self, p: usize, a: usize, r: usize, g: &Goal) -> f64 {
        self.record(p, a, r).distance(g)
    }

    /// Metric averaged over valid repeats; `+∞` if none is valid.
    pub fn mean_distance(&self, p: usize, a: usize, g: &Goal) -> f64 {
        let (sum, n) = (0..self.repeats)
            .map(|r| self.record(p, a, r))
            .filter(|rec| rec.valid)
            .fold((0.0, 0usize), |(s, n), rec| (s + rec.distance(g), n + 1));
        if n == 0 {
            f64::INFINITY
        } else {
            sum / n as f64
        }
    }

    /// Exhaustive argmin of the repeat-averaged metric over the action grid;
    /// ties go to the lowest action index.
    pub fn brute_force_optimal(&self, p: usize, g: &Goal) -> Result<GridOptimum> {
        if p >= self.n_params() {
            return Err(IrpError::contract(format!("parameter cell {p} out of range")));
        }
        let d: Vec<f64> = (0..self.n_actions())
            .into_par_iter()
            .map(|a| self.mean_distance(p, a, g))
            .collect();
        Ok(self.argmin(&d))
    }

    fn argmin(&self, d: &[f64]) -> GridOptimum {
        let mut best = 0;
        for (a, &v) in d.iter().enumerate() {
            if v < d[best] {
                best = a;
            }
        }
        GridOptimum {
            action_idx: best,
            action: self.actions.action(best),
            distance: d[best],
        }
    }

    /// Mean of the repeat-averaged metric over a set of cells, per action.
    pub fn mean_over_cells(&self, cells: &[usize], g: &Goal) -> Vec<f64> {
        (0..self.n_actions())
            .into_par_iter()
            .map(|a| {
                cells.iter().map(|&p| self.mean_distance(p, a, g)).sum::<f64>() / cells.len() as f64
            })
            .collect()
    }

    /// Grid action with the lowest mean distance over the training cells.
    pub fn avg_action(&self, g: &Goal) -> Result<GridOptimum> {
        let train = self.train_cells()?;
        Ok(self.argmin(&self.mean_over_cells(&train, g)))
    }

    pub fn train_cells(&self) -> Result<Vec<usize>> {
        self.require_splits()?;
        let train = self.cells(Split::Train);
        if train.is_empty() {
            return Err(IrpError::contract("dataset has no training cells"));
        }
        Ok(train)
    }

    /// Goals drawn uniformly from the stored trajectories of one cell: a
    /// uniform valid record, then a uniform sample on it (the settled
    /// keypoints for cloth).
    pub fn sample_goals_detailed(&self, p: usize, n: usize, seed: u64) -> Result<Vec<SampledGoal>> {
        if n == 0 {
            return Err(IrpError::contract("need at least one goal"));
        }
        let valid: Vec<(usize, usize)> = (0..self.n_actions())
            .flat_map(|a| (0..self.repeats).map(move |r| (a, r)))
            .filter(|&(a, r)| self.record(p, a, r).valid)
            .collect();
        if valid.is_empty() {
            return Err(IrpError::contract(format!("cell {p} has no valid records")));
        }
        let mut rng = RngStream::new(derive_seed(seed, &[p as u64]), "goals");
        let inside = |q: &[f64; 2]| q[0].abs() <= WINDOW_HALF_WIDTH && q[1].abs() <= WINDOW_HALF_WIDTH;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let (a, r) = valid[rng.index(valid.len())];
            let rec = self.record(p, a, r);
            let goal = match self.task {
                Task::Rope => {
                    let pts = rec.points(0);
                    let q = pts[rng.index(pts.len())];
                    if !inside(&q) {
                        continue;
                    }
                    Goal::Rope(q)
                }
                Task::Cloth => {
                    let k = rec.keypoints().unwrap_or_default();
                    if k.len() != 9 || !k.iter().all(inside) {
                        continue;
                    }
                    Goal::Cloth(k)
                }
            };
            out.push(SampledGoal {
                goal,
                param_idx: p,
                action_idx: a,
                repeat: r,
            });
        }
        Ok(out)
    }

    pub fn sample_goals(&self, p: usize, n: usize, seed: u64) -> Result<Vec<Goal>> {
        Ok(self
            .sample_goals_detailed(p, n, seed)?
            .into_iter()
            .map(|s| s.goal)
            .collect())
    }

    /// Largest time-aligned spread between repeats of the same action in a
    /// cell. Bounds how far a goal on one repeat can be from the others
    /// (0 for a single repeat or a noiseless world).
    pub fn repeat_noise_radius(&self, p: usize) -> f64 {
        if self.repeats < 2 {
            return 0.0;
        }
        (0..self.n_actions())
            .map(|a| {
                let mut worst: f64 = 0.0;
                for r in 0..self.repeats {
                    for s in r + 1..self.repeats {
                        let (x, y) = (self.record(p, a, r), self.record(p, a, s));
                        if !(x.valid && y.valid) {
                            continue;
                        }
                        if let Task::Cloth = self.task {
                            let (kx, ky) = (x.keypoints().unwrap(), y.keypoints().unwrap());
                            let d = kx
                                .iter()
                                .zip(&ky)
                                .map(|(u, v)| (u[0] - v[0]).hypot(u[1] - v[1]))
                                .fold(0.0, f64::max);
                            worst = worst.max(d);
                            continue;
                        }
                        for (u, v) in x.tracks[0].iter().zip(&y.tracks[0]) {
                            let d = ((u[1] - v[1]) as f64).hypot((u[2] - v[2]) as f64);
                            worst = worst.max(d);
                        }
                    }
                }
                worst
            })
            .fold(0.0, f64::max)
    }

    /// Assigns splits: the outer border of the parameter grid is
    /// extrapolation; a seeded shuffle of the interior gives
    /// ⌈20%⌉ interpolation, ⌈10%⌉ validation and the rest training.
    pub fn split(&mut self) -> Result<()> {
        self.splits = Some(split_labels(&self.params, self.seed)?);
        Ok(())
    }
}

pub fn split_labels(params: &ParamGrid, seed: u64) -> Result<Vec<Split>> {
    let (n0, n1) = params.dims();
    if n0 < 4 || n1 < 4 {
        return Err(IrpError::contract(format!(
            "splitting needs a parameter grid of at least 4×4, got {n0}×{n1}"
        )));
    }
    let mut labels = vec![Split::TestExtrap; params.len()];
    let mut interior: Vec<usize> = (0..params.len())
        .filter(|&p| {
            let (i, j) = params.coords(p);
            i > 0 && j > 0 && i + 1 < n0 && j + 1 < n1
        })
        .collect();
    // Fisher-Yates with the dataset stream keeps the split a function of
    // (grid, seed) only.
    let mut rng = RngStream::new(seed, "split");
    for i in (1..interior.len()).rev() {
        interior.swap(i, rng.index(i + 1));
    }
    let n = interior.len();
    let n_interp = (n * 2).div_ceil(10);
    let n_val = n.div_ceil(10);
    for (k, &p) in interior.iter().enumerate() {
        labels[p] = if k < n_interp {
            Split::TestInterp
        } else if k < n_interp + n_val {
            Split::Validation
        } else {
            Split::Train
        };
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(task: Task, seed: u64) -> GenConfig {
        let mut cfg = GenConfig::desk(task, seed).with_param_dims(4, 4).unwrap();
        cfg.action_dims = vec![2; task.action_dim()];
        cfg.repeats = 2;
        cfg
    }

    #[test]
    fn action_grid_indexing() {
        let g = ActionGrid::new(vec![9, 9, 9]).unwrap();
        assert_eq!(g.len(), 729);
        for idx in [0, 1, 80, 400, 728] {
            assert_eq!(g.index(&g.coords(idx)), idx);
            assert_eq!(g.nearest(&g.action(idx)), idx);
        }
        assert_eq!(g.action(728), vec![1.0, 1.0, 1.0]);
        assert_eq!(g.action(9), vec![0.0, 0.125, 0.0]);
        assert!(ActionGrid::new(vec![9, 1]).is_err());
    }

    #[test]
    fn split_counts_on_eight_by_eight() {
        let grid = ParamGrid::linspace((0.0, 1.0), 8, (0.0, 1.0), 8).unwrap();
        let labels = split_labels(&grid, 7).unwrap();
        let count = |s: Split| labels.iter().filter(|&&l| l == s).count();
        assert_eq!(count(Split::TestExtrap), 28);
        assert_eq!(count(Split::TestInterp), 8);
        assert_eq!(count(Split::Validation), 4);
        assert_eq!(count(Split::Train), 24);
        assert_eq!(labels, split_labels(&grid, 7).unwrap());
        let small = ParamGrid::linspace((0.0, 1.0), 3, (0.0, 1.0), 8).unwrap();
        assert!(split_labels(&small, 7).is_err());
    }

    #[test]
    fn noiseless_repeats_are_identical() {
        let mut cfg = tiny(Task::Rope, 1);
        cfg.world = WorldVariant::training();
        cfg.params = ParamGrid::linspace((0.9, 1.1), 2, (0.02, 0.04), 2).unwrap();
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.n_records(), 4 * 8 * 2);
        for p in 0..4 {
            for a in 0..8 {
                assert_eq!(ds.record(p, a, 0), ds.record(p, a, 1));
            }
            assert_eq!(ds.repeat_noise_radius(p), 0.0);
        }
    }

    #[test]
    fn oracles_on_a_small_rope_set() {
        let mut cfg = tiny(Task::Rope, 3);
        cfg.params = ParamGrid::linspace((0.9, 1.1), 2, (0.02, 0.04), 2).unwrap();
        let ds = generate(&cfg).unwrap();
        let radius = ds.repeat_noise_radius(1);
        assert!(radius > 0.0);
        for sg in ds.sample_goals_detailed(1, 5, 9).unwrap() {
            let opt = ds.brute_force_optimal(1, &sg.goal).unwrap();
            assert!(opt.distance <= radius + 1e-9);
            for a in 0..ds.n_actions() {
                assert!(opt.distance <= ds.mean_distance(1, a, &sg.goal));
            }
        }
        assert_eq!(ds.sample_goals(1, 5, 9).unwrap(), ds.sample_goals(1, 5, 9).unwrap());
        assert!(ds.avg_action(&Goal::Rope([0.0, 0.0])).is_err());
    }
}
