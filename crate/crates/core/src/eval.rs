//! Experiment harness: method matrices over held-out cells, online
//! adaptation, embodiment change, cloth placement, and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::Task;
use crate::baselines::{
    avg_controller, optsim_controller, run_controller, sysid_gt_controller, Controller, DeltaRegController,
    DeltaRegModel, HeuristicController, InitRule, IrpController, IterLinearController, SysIdController, SysIdModel,
};
use crate::config::Config;
use crate::dataset::{Dataset, Split};
use crate::error::{IrpError, Result};
use crate::irp::{EpisodeLog, IrpConfig, StopReason};
use crate::params::{WorldMode, WorldVariant};
use crate::predictor::{GtPredictor, Predictor};
use crate::rng::{derive_seed, RngStream};
use crate::sim::{ClothPlant, Plant, RopePlant, SwapPlant};
use crate::trajectory::Goal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Irp,
    /// IRP driven by the simulator itself (oracle upper bound).
    IrpGt,
    ConstSigma,
    Avg,
    SysId,
    SysIdGt,
    OptSim,
    IterHeuristic,
    IterLinear,
    DeltaReg,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Irp,
        Method::IrpGt,
        Method::ConstSigma,
        Method::Avg,
        Method::SysId,
        Method::SysIdGt,
        Method::OptSim,
        Method::IterHeuristic,
        Method::IterLinear,
        Method::DeltaReg,
    ];

    /// Methods of the simulation comparison.
    pub const SIM_MATRIX: [Method; 8] = [
        Method::Irp,
        Method::ConstSigma,
        Method::Avg,
        Method::SysId,
        Method::SysIdGt,
        Method::IterHeuristic,
        Method::IterLinear,
        Method::DeltaReg,
    ];

    pub const CLOTH: [Method; 3] = [Method::Irp, Method::DeltaReg, Method::IterHeuristic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Irp => "irp",
            Method::IrpGt => "irp_gt",
            Method::ConstSigma => "const_sigma",
            Method::Avg => "avg",
            Method::SysId => "sysid",
            Method::SysIdGt => "sysid_gt",
            Method::OptSim => "optsim",
            Method::IterHeuristic => "iter_heuristic",
            Method::IterLinear => "iter_linear",
            Method::DeltaReg => "deltareg",
        }
    }

    /// Methods whose executed actions are always action-grid points.
    pub fn grid_restricted(self) -> bool {
        matches!(self, Method::Avg | Method::SysId | Method::SysIdGt | Method::OptSim)
    }

    pub fn supports(self, task: Task) -> bool {
        match task {
            Task::Rope => true,
            Task::Cloth => matches!(
                self,
                Method::Irp | Method::IrpGt | Method::ConstSigma | Method::Avg | Method::IterHeuristic | Method::DeltaReg
            ),
        }
    }
}

impl FromStr for Method {
    type Err = IrpError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| IrpError::format(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to instantiate any method on a dataset.
#[derive(Clone)]
pub struct MethodKit {
    pub ds: Arc<Dataset>,
    pub pred: Option<Arc<dyn Predictor>>,
    pub sysid: Option<Arc<SysIdModel>>,
    pub deltareg: Option<Arc<DeltaRegModel>>,
    pub irp: IrpConfig,
    pub heuristic_gain: f64,
    pub linear_lambda: f64,
}

impl MethodKit {
    pub fn new(ds: Arc<Dataset>) -> Self {
        MethodKit {
            ds,
            pred: None,
            sysid: None,
            deltareg: None,
            irp: IrpConfig::default(),
            heuristic_gain: 0.5,
            linear_lambda: 1e-3,
        }
    }

    fn need<T: Clone>(x: &Option<T>, what: &str) -> Result<T> {
        x.clone()
            .ok_or_else(|| IrpError::contract(format!("method needs a {what}")))
    }

    /// Controller for `method` on a cell whose true parameters are `truth`,
    /// executed on `plant`.
    pub fn controller(&self, method: Method, truth: (f64, f64), plant: &Arc<dyn Plant>) -> Result<Box<dyn Controller>> {
        let ds = &self.ds;
        if !method.supports(ds.task) {
            return Err(IrpError::contract(format!("{method} is not defined for the {} task", ds.task)));
        }
        let init = InitRule::default_for(ds);
        Ok(match method {
            Method::Irp | Method::ConstSigma | Method::IrpGt => {
                let pred: Arc<dyn Predictor> = if method == Method::IrpGt {
                    Arc::new(GtPredictor::new(plant.clone(), ds.grid_spec))
                } else {
                    Self::need(&self.pred, "predictor")?
                };
                let cfg = IrpConfig {
                    adaptive_sigma: method != Method::ConstSigma,
                    ..self.irp.clone()
                };
                Box::new(IrpController {
                    pred,
                    cfg,
                    spec: ds.grid_spec,
                    init,
                })
            }
            Method::Avg => Box::new(avg_controller(ds.clone())),
            Method::SysIdGt => Box::new(sysid_gt_controller(ds.clone(), truth)),
            Method::OptSim => Box::new(optsim_controller(ds.clone(), truth)),
            Method::SysId => Box::new(SysIdController {
                ds: ds.clone(),
                model: Self::need(&self.sysid, "fitted sysid model")?,
            }),
            Method::IterHeuristic => Box::new(HeuristicController {
                init,
                gain: self.heuristic_gain,
            }),
            Method::IterLinear => Box::new(IterLinearController {
                init,
                cfg: self.irp.clone(),
                lambda: self.linear_lambda,
            }),
            Method::DeltaReg => Box::new(DeltaRegController {
                model: Self::need(&self.deltareg, "fitted deltareg model")?,
                init,
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_cells: usize,
    pub n_goals: usize,
    pub max_step: usize,
    pub d_stop: f64,
    pub world: WorldVariant,
    pub seed: u64,
}

impl EvalConfig {
    /// Simulation comparison: 5 cells × 25 goals, 16 steps.
    pub fn simulation(seed: u64) -> Self {
        EvalConfig {
            n_cells: 5,
            n_goals: 25,
            max_step: 16,
            d_stop: 0.0,
            world: WorldVariant::training(),
            seed,
        }
    }

    /// Domain-shift deployment: 10 steps in the deployment world.
    pub fn deployment(seed: u64) -> Self {
        EvalConfig {
            max_step: 10,
            world: WorldVariant::deployment(),
            ..Self::simulation(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.n_goals == 0 || self.max_step == 0 {
            return Err(IrpError::contract("cells, goals and steps must be at least 1"));
        }
        self.world.validate()
    }
}

/// One episode's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub method: String,
    pub split: String,
    /// Variant label within an experiment (world, link length, ...).
    pub variant: String,
    pub cell: usize,
    pub goal: usize,
    pub distances: Vec<f64>,
    pub final_action: Vec<f64>,
    pub stop: Option<StopReason>,
    pub error: Option<String>,
    /// Brute-force distance on the cell's stored records.
    pub floor: Option<f64>,
}

impl EpisodeRow {
    /// Distance at 0-based step `i`, holding the last value after a stop.
    pub fn at(&self, i: usize) -> f64 {
        self.distances
            .get(i)
            .or(self.distances.last())
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    pub fn final_distance(&self) -> f64 {
        self.distances.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub experiment: String,
    /// Step budget; every row is reported over this many steps.
    pub budget: usize,
    pub rows: Vec<EpisodeRow>,
}

impl ResultsTable {
    pub fn select<'a>(&'a self, method: &'a str, split: Option<&'a str>) -> impl Iterator<Item = &'a EpisodeRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.method == method && split.is_none_or(|s| r.split == s))
    }

    /// Mean distance at a 0-based step over the selected rows.
    pub fn mean_at(&self, method: &str, split: Option<&str>, step: usize) -> f64 {
        let v: Vec<f64> = self.select(method, split).map(|r| r.at(step)).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn errors(&self) -> Vec<&EpisodeRow> {
        self.rows.iter().filter(|r| r.error.is_some()).collect()
    }
}

/// Up to `n` cells of a split, chosen by a seeded shuffle and returned in
/// index order.
pub fn choose_cells(ds: &Dataset, split: Split, n: usize, seed: u64) -> Vec<usize> {
    let mut cells = ds.cells(split);
    let mut rng = RngStream::new(derive_seed(seed, &[split.id() as u64]), "cells");
    for i in (1..cells.len()).rev() {
        let j = rng.index(i + 1);
        cells.swap(i, j);
    }
    cells.truncate(n);
    cells.sort_unstable();
    cells
}

fn make_plant(ds: &Dataset, p: usize, world: WorldVariant, seed: u64) -> Result<Arc<dyn Plant>> {
    Ok(match ds.task {
        Task::Rope => Arc::new(RopePlant::new(ds.rope_params(p)?, world, seed)),
        Task::Cloth => {
            let mut plant = ClothPlant::new(ds.cloth_params(p)?, world, seed);
            plant.action_box = ds.action_box();
            Arc::new(plant)
        }
    })
}

/// The floor is only a hard bound when the plant reproduces the stored
/// records exactly.
fn floor_applies(ds: &Dataset, world: &WorldVariant) -> bool {
    world.mode == WorldMode::Training
        && *world == ds.world
        && world.init_noise_sd == 0.0
        && ds.world.init_noise_sd == 0.0
}

struct Job {
    method: Method,
    split: String,
    variant: String,
    cell: usize,
    goal_idx: usize,
    goal: Goal,
    plant: Arc<dyn Plant>,
    truth: (f64, f64),
    seed: u64,
    floor: Option<f64>,
    check_floor: bool,
}

fn run_jobs(kit: &MethodKit, jobs: Vec<Job>, max_step: usize, d_stop: f64) -> Vec<EpisodeRow> {
    jobs.into_par_iter()
        .map(|j| {
            let outcome = kit
                .controller(j.method, j.truth, &j.plant)
                .and_then(|c| run_controller(j.plant.as_ref(), c.as_ref(), &j.goal, max_step, d_stop, j.seed));
            let mut row = EpisodeRow {
                method: j.method.name().to_string(),
                split: j.split,
                variant: j.variant,
                cell: j.cell,
                goal: j.goal_idx,
                distances: Vec::new(),
                final_action: Vec::new(),
                stop: None,
                error: None,
                floor: j.floor,
            };
            match outcome {
                Ok(log) => fill_row(&mut row, &log),
                Err(e) => row.error = Some(e.to_string()),
            }
            if j.check_floor && j.method.grid_restricted() {
                if let (Some(f), Some(best)) = (j.floor, row.distances.iter().copied().reduce(f64::min)) {
                    if best < f - 1e-9 {
                        row.error = Some(format!("distance {best} below the brute-force floor {f}"));
                    }
                }
            }
            row
        })
        .collect()
}

fn fill_row(row: &mut EpisodeRow, log: &EpisodeLog) {
    row.distances = log.distances();
    row.final_action = log.final_action().map(<[f64]>::to_vec).unwrap_or_default();
    row.stop = Some(log.stop);
    row.error = log.error.clone();
}

/// Every method on every chosen cell of the given splits and its goals.
pub fn run_matrix(kit: &MethodKit, methods: &[Method], splits: &[Split], cfg: &EvalConfig) -> Result<ResultsTable> {
    if methods.is_empty() {
        return Err(IrpError::contract("run_matrix needs at least one method"));
    }
    cfg.validate()?;
    let ds = &kit.ds;
    let check = floor_applies(ds, &cfg.world);
    let mut jobs = Vec::new();
    for &split in splits {
        for p in choose_cells(ds, split, cfg.n_cells, cfg.seed) {
            let goals = ds.sample_goals(p, cfg.n_goals, derive_seed(cfg.seed, &[1, p as u64]))?;
            let floors = goals
                .par_iter()
                .map(|g| ds.brute_force_optimal(p, g).map(|o| o.distance))
                .collect::<Result<Vec<f64>>>()?;
            for (gi, g) in goals.iter().enumerate() {
                let ep_seed = derive_seed(cfg.seed, &[2, p as u64, gi as u64]);
                let plant = make_plant(ds, p, cfg.world, ep_seed)?;
                for &m in methods {
                    jobs.push(Job {
                        method: m,
                        split: split.name().to_string(),
                        variant: world_label(&cfg.world).to_string(),
                        cell: p,
                        goal_idx: gi,
                        goal: g.clone(),
                        plant: plant.clone(),
                        truth: ds.params.values(p),
                        seed: ep_seed,
                        floor: Some(floors[gi]),
                        check_floor: check,
                    });
                }
            }
        }
    }
    Ok(ResultsTable {
        experiment: "sim_matrix".into(),
        budget: cfg.max_step,
        rows: run_jobs(kit, jobs, cfg.max_step, cfg.d_stop),
    })
}

fn world_label(w: &WorldVariant) -> &'static str {
    match w.mode {
        WorldMode::Training => "training",
        WorldMode::Deployment => "deployment",
    }
}

/// Cell used as "the" test rope for single-rope experiments: the
/// interpolation cell nearest the parameter-grid center.
pub fn base_cell(ds: &Dataset) -> Result<usize> {
    let [b0, b1] = ds.params.bounds();
    let c = (0.5 * (b0.0 + b0.1), 0.5 * (b1.0 + b1.1));
    let n = |v: (f64, f64)| ((v.0 - c.0) / (b0.1 - b0.0)).powi(2) + ((v.1 - c.1) / (b1.1 - b1.0)).powi(2);
    ds.cells(Split::TestInterp)
        .into_iter()
        .min_by(|&a, &b| n(ds.params.values(a)).total_cmp(&n(ds.params.values(b))).then(a.cmp(&b)))
        .ok_or_else(|| IrpError::contract("dataset has no interpolation cells"))
}

/// IRP on the base rope with the knotted rope swapped in from
/// `swap_step` (0-based) on; one goal per seed. `None` runs the control
/// condition without a swap.
pub fn run_online_adaptation(kit: &MethodKit, cfg: &EvalConfig, swap_step: Option<usize>, n_seeds: usize) -> Result<ResultsTable> {
    cfg.validate()?;
    let ds = &kit.ds;
    if ds.task != Task::Rope {
        return Err(IrpError::contract("online adaptation is a rope experiment"));
    }
    if let Some(s) = swap_step {
        if s == 0 || s >= cfg.max_step {
            return Err(IrpError::contract("swap step must lie inside the step budget"));
        }
    }
    let p = base_cell(ds)?;
    let params = ds.rope_params(p)?;
    let mut jobs = Vec::new();
    for s in 0..n_seeds {
        let seed = derive_seed(cfg.seed, &[3, s as u64]);
        let goal = ds.sample_goals(p, 1, seed)?.remove(0);
        let before: Arc<dyn Plant> = Arc::new(RopePlant::new(params.clone(), cfg.world, seed));
        let plant: Arc<dyn Plant> = match swap_step {
            Some(k) => Arc::new(SwapPlant {
                before,
                after: Arc::new(RopePlant::new(params.knotted(), cfg.world, seed)),
                swap_step: k,
            }),
            None => before,
        };
        jobs.push(Job {
            method: Method::Irp,
            split: Split::TestInterp.name().into(),
            variant: swap_step.map_or("no_swap".into(), |k| format!("swap_{k}")),
            cell: p,
            goal_idx: s,
            goal,
            plant,
            truth: ds.params.values(p),
            seed,
            floor: None,
            check_floor: false,
        });
    }
    Ok(ResultsTable {
        experiment: "online_adaptation".into(),
        budget: cfg.max_step,
        rows: run_jobs(kit, jobs, cfg.max_step, cfg.d_stop),
    })
}

/// IRP on the base rope with different arm-link lengths, same goals.
pub fn run_embodiment(kit: &MethodKit, cfg: &EvalConfig, links: &[f64]) -> Result<ResultsTable> {
    cfg.validate()?;
    let ds = &kit.ds;
    if ds.task != Task::Rope {
        return Err(IrpError::contract("the embodiment experiment is a rope experiment"));
    }
    if links.iter().any(|l| !WorldVariant::EMBODIMENT_LINKS.contains(l)) {
        return Err(IrpError::contract("link lengths must come from {0.4, 0.5, 0.6}"));
    }
    let p = base_cell(ds)?;
    let goals = ds.sample_goals(p, cfg.n_goals, derive_seed(cfg.seed, &[4]))?;
    let mut jobs = Vec::new();
    for &l in links {
        for (gi, g) in goals.iter().enumerate() {
            let seed = derive_seed(cfg.seed, &[5, gi as u64]);
            jobs.push(Job {
                method: Method::Irp,
                split: Split::TestInterp.name().into(),
                variant: format!("link_{l:.1}"),
                cell: p,
                goal_idx: gi,
                goal: g.clone(),
                plant: make_plant(ds, p, cfg.world.with_link(l), seed)?,
                truth: ds.params.values(p),
                seed,
                floor: None,
                check_floor: false,
            });
        }
    }
    Ok(ResultsTable {
        experiment: "embodiment".into(),
        budget: cfg.max_step,
        rows: run_jobs(kit, jobs, cfg.max_step, cfg.d_stop),
    })
}

/// Default Y range of the gripped edge for cloth goals, m.
pub const CLOTH_GOAL_RANGE: (f64, f64) = (0.6, 1.0);

/// Flat 3×3 lattice for a cloth of side `size`: the gripped edge (row 0)
/// at `y`, the other rows every `size / 2` beyond it, all on the table.
pub fn cloth_goal(y: f64, size: f64) -> Goal {
    Goal::Cloth(
        (0..9)
            .map(|i| [y + (i / 3) as f64 * 0.5 * size, 0.0])
            .collect(),
    )
}

/// `n_goals` lattices with the gripped edge evenly spread over `range`.
pub fn cloth_goals(size: f64, n_goals: usize, range: (f64, f64)) -> Vec<Goal> {
    (0..n_goals)
        .map(|i| {
            let t = if n_goals == 1 { 0.5 } else { i as f64 / (n_goals - 1) as f64 };
            cloth_goal(range.0 + t * (range.1 - range.0), size)
        })
        .collect()
}

/// Cloth placement on held-out cloths (interpolation and extrapolation
/// cells pooled).
pub fn run_cloth_eval(kit: &MethodKit, methods: &[Method], cfg: &EvalConfig, range: (f64, f64)) -> Result<ResultsTable> {
    cfg.validate()?;
    let ds = &kit.ds;
    if ds.task != Task::Cloth {
        return Err(IrpError::contract("cloth evaluation needs a cloth dataset"));
    }
    let mut pool: Vec<(Split, usize)> = Vec::new();
    for split in [Split::TestInterp, Split::TestExtrap] {
        pool.extend(ds.cells(split).into_iter().map(|p| (split, p)));
    }
    let mut rng = RngStream::new(cfg.seed, "cloths");
    for i in (1..pool.len()).rev() {
        let j = rng.index(i + 1);
        pool.swap(i, j);
    }
    pool.truncate(cfg.n_cells);
    pool.sort_by_key(|c| c.1);
    let mut jobs = Vec::new();
    for (split, p) in pool {
        let size = ds.params.values(p).0;
        for (gi, g) in cloth_goals(size, cfg.n_goals, range).into_iter().enumerate() {
            let seed = derive_seed(cfg.seed, &[6, p as u64, gi as u64]);
            let plant = make_plant(ds, p, cfg.world, seed)?;
            for &m in methods {
                jobs.push(Job {
                    method: m,
                    split: split.name().into(),
                    variant: world_label(&cfg.world).into(),
                    cell: p,
                    goal_idx: gi,
                    goal: g.clone(),
                    plant: plant.clone(),
                    truth: ds.params.values(p),
                    seed,
                    floor: None,
                    check_floor: false,
                });
            }
        }
    }
    Ok(ResultsTable {
        experiment: "cloth".into(),
        budget: cfg.max_step,
        rows: run_jobs(kit, jobs, cfg.max_step, cfg.d_stop),
    })
}

// ---------------------------------------------------------------------------
// Statistics and report files

/// Mean, sample SD and 95% half-width `1.96·SD/√n` (normal approximation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci95: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Stat {
        let n = v.len();
        if n == 0 {
            return Stat { n, mean: f64::NAN, sd: f64::NAN, ci95: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { n, mean, sd, ci95: 1.96 * sd / (n as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub split: String,
    pub variant: String,
    /// 1-based step.
    pub step: usize,
    pub stat: Stat,
}

/// Per (method, split, variant, step) statistics in first-seen order.
pub fn aggregate(t: &ResultsTable) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in &t.rows {
        let k = (r.method.clone(), r.split.clone(), r.variant.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::new();
    for (m, s, v) in keys {
        let rows: Vec<&EpisodeRow> = t
            .rows
            .iter()
            .filter(|r| r.method == m && r.split == s && r.variant == v && !r.distances.is_empty())
            .collect();
        for step in 0..t.budget {
            let vals: Vec<f64> = rows.iter().map(|r| r.at(step)).collect();
            out.push(AggregateRow {
                method: m.clone(),
                split: s.clone(),
                variant: v.clone(),
                step: step + 1,
                stat: Stat::of(&vals),
            });
        }
    }
    out
}

/// One line per (episode, step) over the full budget; steps after an early
/// stop repeat the final distance with `executed = 0`.
pub fn episodes_csv(t: &ResultsTable) -> String {
    let mut s = String::from("experiment,method,split,variant,cell,goal,step,distance_m,executed,floor_m,stop,error\n");
    for r in &t.rows {
        for step in 0..t.budget {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.9},{},{},{},{}",
                t.experiment,
                r.method,
                r.split,
                r.variant,
                r.cell,
                r.goal,
                step + 1,
                r.at(step),
                u8::from(step < r.distances.len()),
                r.floor.map_or(String::new(), |f| format!("{f:.9}")),
                r.stop.map_or("error", StopReason::name),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            );
        }
    }
    s
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("method,split,variant,step,n,mean_m,sd_m,ci95_m\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.9},{:.9},{:.9}",
            r.method, r.split, r.variant, r.step, r.stat.n, r.stat.mean, r.stat.sd, r.stat.ci95
        );
    }
    s
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of mean distance (cm) against step, one line per method and
/// variant, with a shaded 95% band.
pub fn svg_chart(title: &str, rows: &[&AggregateRow]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 60.0, 170.0, 40.0, 50.0);
    let mut series: Vec<(String, Vec<&AggregateRow>)> = Vec::new();
    for r in rows {
        let label = if r.variant.is_empty() || r.variant == "training" || r.variant == "deployment" {
            r.method.clone()
        } else {
            format!("{} ({})", r.method, r.variant)
        };
        match series.iter_mut().find(|s| s.0 == label) {
            Some(s) => s.1.push(r),
            None => series.push((label, vec![r])),
        }
    }
    let max_step = rows.iter().map(|r| r.step).max().unwrap_or(1).max(2);
    let y_max = rows
        .iter()
        .map(|r| 100.0 * (r.stat.mean + r.stat.ci95))
        .filter(|v| v.is_finite())
        .fold(1e-3, f64::max)
        * 1.05;
    let px = |step: usize| ml + (step - 1) as f64 / (max_step - 1) as f64 * (w - ml - mr);
    let py = |cm: f64| mt + (1.0 - (cm / y_max).clamp(0.0, 1.0)) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, xml_escape(title));
    let (x0, x1, y0, y1) = (ml, w - mr, mt, h - mb);
    let _ = writeln!(s, r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, py(v) + 4.0);
    }
    for step in 1..=max_step {
        if max_step <= 16 || step % 2 == 1 {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{step}</text>"#, px(step), y1 + 16.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, (x0 + x1) / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">distance (cm)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let fin: Vec<&&AggregateRow> = pts.iter().filter(|r| r.stat.mean.is_finite()).collect();
        if fin.is_empty() {
            continue;
        }
        let upper: Vec<String> = fin
            .iter()
            .map(|r| format!("{:.1},{:.1}", px(r.step), py(100.0 * (r.stat.mean + r.stat.ci95))))
            .collect();
        let lower: Vec<String> = fin
            .iter()
            .rev()
            .map(|r| format!("{:.1},{:.1}", px(r.step), py(100.0 * (r.stat.mean - r.stat.ci95).max(0.0))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = fin
            .iter()
            .map(|r| format!("{:.1},{:.1}", px(r.step), py(100.0 * r.stat.mean)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = mt + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x1 + 10.0,
            x1 + 30.0,
            x1 + 36.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Run manifest: configuration, seeds and dataset identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub code_version: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub files: Vec<String>,
}

fn write(path: PathBuf, text: &str, files: &mut Vec<String>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| IrpError::io(&path, e))?;
    files.push(path.file_name().unwrap().to_string_lossy().into_owned());
    Ok(())
}

/// Writes `<exp>_episodes.csv`, `<exp>_aggregate.csv`, one SVG per split
/// and `<exp>_manifest.json` into `out_dir`; returns the manifest.
pub fn summarize(t: &ResultsTable, out_dir: &Path, dataset_hash: &str, seed: u64, config: &Config) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| IrpError::io(out_dir, e))?;
    let exp = &t.experiment;
    let mut files = Vec::new();
    write(out_dir.join(format!("{exp}_episodes.csv")), &episodes_csv(t), &mut files)?;
    let agg = aggregate(t);
    write(out_dir.join(format!("{exp}_aggregate.csv")), &aggregate_csv(&agg), &mut files)?;
    let mut splits: Vec<&str> = Vec::new();
    for r in &agg {
        if !splits.contains(&r.split.as_str()) {
            splits.push(&r.split);
        }
    }
    for split in splits {
        let rows: Vec<&AggregateRow> = agg.iter().filter(|r| r.split == split).collect();
        write(
            out_dir.join(format!("{exp}_{split}.svg")),
            &svg_chart(&format!("{exp}: {split}"), &rows),
            &mut files,
        )?;
    }
    let manifest = Manifest {
        experiment: exp.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_hash: dataset_hash.to_string(),
        seed,
        config: config.to_json(),
        files: files.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(out_dir.join(format!("{exp}_manifest.json")), &(text + "\n"), &mut files)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ResultsTable {
        let row = |m: &str, d: Vec<f64>| EpisodeRow {
            method: m.into(),
            split: "test_interp".into(),
            variant: "training".into(),
            cell: 0,
            goal: 0,
            distances: d,
            final_action: vec![],
            stop: Some(StopReason::MaxStep),
            error: None,
            floor: None,
        };
        ResultsTable {
            experiment: "t".into(),
            budget: 4,
            rows: vec![
                row("irp", vec![0.4, 0.2, 0.1, 0.05]),
                row("irp", vec![0.2, 0.1]),
                row("avg", vec![0.3]),
            ],
        }
    }

    #[test]
    fn csv_has_one_line_per_episode_step() {
        let t = table();
        assert_eq!(episodes_csv(&t).lines().count(), 1 + 3 * 4);
    }

    #[test]
    fn ci_matches_direct_formula() {
        let v = [0.1, 0.4, 0.25, 0.3, 0.05];
        let s = Stat::of(&v);
        let m = v.iter().sum::<f64>() / 5.0;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0).sqrt();
        assert!((s.ci95 - 1.96 * sd / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aggregate_holds_stopped_episodes() {
        let agg = aggregate(&table());
        let irp4 = agg.iter().find(|r| r.method == "irp" && r.step == 4).unwrap();
        assert!((irp4.stat.mean - 0.075).abs() < 1e-12);
        let avg = agg.iter().filter(|r| r.method == "avg").map(|r| r.stat.mean).collect::<Vec<_>>();
        assert_eq!(avg, vec![0.3; 4]);
    }

    #[test]
    fn svg_names_every_method() {
        let agg = aggregate(&table());
        let rows: Vec<&AggregateRow> = agg.iter().collect();
        let svg = svg_chart("t", &rows);
        assert!(svg.contains(">irp<") && svg.contains(">avg<"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn cloth_goal_lattice() {
        let g = cloth_goal(0.8, 0.5);
        let k = g.cloth_keypoints().unwrap();
        assert_eq!(k[0], [0.8, 0.0]);
        assert_eq!(k[4], [1.05, 0.0]);
        assert_eq!(k[8], [1.3, 0.0]);
        let gs = cloth_goals(0.5, 11, (0.6, 1.0));
        assert_eq!(gs.len(), 11);
        assert_eq!(gs[10].cloth_keypoints().unwrap()[0], [1.0, 0.0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
