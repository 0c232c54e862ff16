//! Python bindings. Build with `--features extension-module` and load the
//! resulting library as the `irp` module.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use irp_core::baselines::run_controller;
use irp_core::dataset::{self, GenConfig, Split};
use irp_core::eval::{cloth_goals, MethodKit, Method, CLOTH_GOAL_RANGE};
use irp_core::params::{WorldMode, WorldVariant};
use irp_core::predictor::{KnnConfig, KnnMode, KnnPredictor, Predictor};
use irp_core::raster::{self, GridSpec};
use irp_core::rng::derive_seed;
use irp_core::sim::{ClothPlant, Plant, RopePlant};
use irp_core::action::DeltaAction;
use irp_core::{Goal, IrpError, Task, Trajectory};

fn to_py(e: IrpError) -> PyErr {
    let msg = format!("[{}] {e}", e.category());
    match e.category() {
        "io" => PyOSError::new_err(msg),
        "diverged" | "training" => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn parse<T: std::str::FromStr<Err = IrpError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn goal_from(points: Vec<[f64; 2]>) -> PyResult<Goal> {
    let g = match points.len() {
        1 => Goal::Rope(points[0]),
        9 => Goal::Cloth(points),
        n => return Err(PyValueError::new_err(format!("a goal has 1 (rope) or 9 (cloth) points, got {n}"))),
    };
    g.validate().map_err(to_py)?;
    Ok(g)
}

fn goal_points(g: &Goal) -> Vec<[f64; 2]> {
    match g {
        Goal::Rope(p) => vec![*p],
        Goal::Cloth(k) => k.clone(),
    }
}

fn tracks(t: &Trajectory) -> Vec<Vec<[f64; 2]>> {
    (0..t.n_tracks()).map(|i| t.points(i)).collect()
}

/// A generated or loaded dataset of simulated executions.
#[pyclass(name = "Dataset", frozen)]
pub struct PyDataset {
    inner: Arc<dataset::Dataset>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: Arc::new(dataset::Dataset::load(&path).map_err(to_py)?),
        })
    }

    /// Simulates every (parameter, action) pair of a desk-sized grid.
    #[staticmethod]
    #[pyo3(signature = (task, seed=0, param_dims=(4, 4), action_dims=None, repeats=1))]
    fn generate(
        py: Python<'_>,
        task: &str,
        seed: u64,
        param_dims: (usize, usize),
        action_dims: Option<Vec<usize>>,
        repeats: usize,
    ) -> PyResult<Self> {
        let mut cfg = GenConfig::desk(parse(task)?, seed)
            .with_param_dims(param_dims.0, param_dims.1)
            .map_err(to_py)?;
        if let Some(d) = action_dims {
            cfg.action_dims = d;
        }
        cfg.repeats = repeats;
        let ds = py
            .detach(|| {
                let mut ds = dataset::generate(&cfg)?;
                ds.split()?;
                Ok::<_, IrpError>(ds)
            })
            .map_err(to_py)?;
        Ok(PyDataset { inner: Arc::new(ds) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Parameter cells assigned to a split such as "test_interp".
    fn cells(&self, split: &str) -> PyResult<Vec<usize>> {
        Ok(self.inner.cells(parse::<Split>(split)?))
    }

    /// Physical parameters of a cell.
    fn params(&self, cell: usize) -> PyResult<(f64, f64)> {
        self.check_cell(cell)?;
        Ok(self.inner.params.values(cell))
    }

    /// Normalized action of an action-grid index.
    fn action(&self, index: usize) -> PyResult<Vec<f64>> {
        if index >= self.inner.n_actions() {
            return Err(PyValueError::new_err("action index out of range"));
        }
        Ok(self.inner.actions.action(index))
    }

    /// Stored trajectory as one list of (y, z) points per track.
    #[pyo3(signature = (cell, action, repeat=0))]
    fn trajectory(&self, cell: usize, action: usize, repeat: usize) -> PyResult<Vec<Vec<[f64; 2]>>> {
        self.check_cell(cell)?;
        if action >= self.inner.n_actions() || repeat >= self.inner.repeats {
            return Err(PyValueError::new_err("action or repeat index out of range"));
        }
        Ok(tracks(&self.inner.trajectory(cell, action, repeat)))
    }

    /// Goals for a cell: reachable rope points, or the cloth goal lattice.
    #[pyo3(signature = (cell, n, seed=0))]
    fn goals(&self, cell: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<[f64; 2]>>> {
        self.check_cell(cell)?;
        let gs = match self.inner.task {
            Task::Rope => self.inner.sample_goals(cell, n, seed).map_err(to_py)?,
            Task::Cloth => cloth_goals(self.inner.params.values(cell).0, n, CLOTH_GOAL_RANGE),
        };
        Ok(gs.iter().map(goal_points).collect())
    }

    /// Smallest distance any stored action of the cell achieves on a goal.
    fn best_distance(&self, cell: usize, goal: Vec<[f64; 2]>) -> PyResult<f64> {
        self.check_cell(cell)?;
        let g = goal_from(goal)?;
        Ok(self.inner.brute_force_optimal(cell, &g).map_err(to_py)?.distance)
    }

    fn __repr__(&self) -> String {
        let (a, b) = self.inner.params.dims();
        format!("Dataset(task={}, params={a}x{b}, actions={})", self.inner.task, self.inner.n_actions())
    }
}

impl PyDataset {
    fn check_cell(&self, cell: usize) -> PyResult<()> {
        if cell >= self.inner.n_params() {
            return Err(PyValueError::new_err(format!("cell {cell} out of range")));
        }
        Ok(())
    }
}

/// Simulated plant at one dataset cell.
#[pyclass(name = "Plant", frozen)]
pub struct PyPlant {
    inner: Arc<dyn Plant>,
    cell: usize,
}

#[pymethods]
impl PyPlant {
    #[new]
    #[pyo3(signature = (dataset, cell, world="training", seed=0))]
    fn new(dataset: &PyDataset, cell: usize, world: &str, seed: u64) -> PyResult<Self> {
        dataset.check_cell(cell)?;
        Ok(PyPlant {
            inner: make_plant(&dataset.inner, cell, parse(world)?, seed).map_err(to_py)?,
            cell,
        })
    }

    #[getter]
    fn cell(&self) -> usize {
        self.cell
    }

    /// Executes a normalized action; `step` picks the per-step noise draw.
    #[pyo3(signature = (action, step=0))]
    fn execute(&self, py: Python<'_>, action: Vec<f64>, step: usize) -> PyResult<Vec<Vec<[f64; 2]>>> {
        let t = py.detach(|| self.inner.execute(&action, step)).map_err(to_py)?;
        Ok(tracks(&t))
    }
}

fn make_plant(ds: &dataset::Dataset, p: usize, mode: WorldMode, seed: u64) -> irp_core::Result<Arc<dyn Plant>> {
    let world = WorldVariant::for_mode(mode);
    Ok(match ds.task {
        Task::Rope => Arc::new(RopePlant::new(ds.rope_params(p)?, world, seed)),
        Task::Cloth => {
            let mut c = ClothPlant::new(ds.cloth_params(p)?, world, seed);
            c.action_box = ds.action_box();
            Arc::new(c)
        }
    })
}

/// Nearest-neighbour forward model over a dataset.
#[pyclass(name = "KnnPredictor", frozen)]
pub struct PyKnn {
    inner: Arc<KnnPredictor>,
    spec: GridSpec,
}

#[pymethods]
impl PyKnn {
    #[new]
    #[pyo3(signature = (dataset, k=None, mode=None, shortlist=None, refine=None))]
    fn new(
        py: Python<'_>,
        dataset: &PyDataset,
        k: Option<usize>,
        mode: Option<&str>,
        shortlist: Option<usize>,
        refine: Option<bool>,
    ) -> PyResult<Self> {
        let d = KnnConfig::default();
        let mode = match mode {
            None => d.mode,
            Some("snap") => KnnMode::Snap,
            Some("interpolate") => KnnMode::Interpolate,
            Some("residual") => KnnMode::Residual,
            Some(m) => return Err(PyValueError::new_err(format!("unknown mode '{m}'"))),
        };
        let cfg = KnnConfig {
            k: k.unwrap_or(d.k),
            shortlist: shortlist.unwrap_or(d.shortlist),
            mode,
            refine: refine.unwrap_or(d.refine),
        };
        let ds = dataset.inner.clone();
        let spec = ds.grid_spec;
        let knn = py.detach(|| KnnPredictor::build(ds, cfg)).map_err(to_py)?;
        Ok(PyKnn {
            inner: Arc::new(knn),
            spec,
        })
    }

    #[getter]
    fn n_entries(&self) -> usize {
        self.inner.n_entries()
    }

    /// Predicted goal distance after adding each delta to the action whose
    /// trajectory was observed.
    fn predict_distances(
        &self,
        py: Python<'_>,
        observed: Vec<Vec<[f64; 2]>>,
        deltas: Vec<Vec<f64>>,
        goal: Vec<[f64; 2]>,
    ) -> PyResult<Vec<f64>> {
        let g = goal_from(goal)?;
        let traj = Trajectory {
            tracks: observed
                .iter()
                .map(|t| Trajectory::from_points(t).tracks.remove(0))
                .collect(),
            final_keypoints: None,
        };
        let deltas: Vec<DeltaAction> = deltas.into_iter().map(DeltaAction).collect();
        py.detach(|| {
            let obs = raster::rasterize(&traj, &self.spec)?;
            let preds = self.inner.predict_batch(&obs, &deltas)?;
            preds
                .iter()
                .map(|p| p.distance(&g, 0.5))
                .collect::<irp_core::Result<Vec<f64>>>()
        })
        .map_err(to_py)
    }
}

/// One episode's per-step record.
#[pyclass(name = "Episode", frozen, get_all)]
pub struct PyEpisode {
    pub distances: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub stop: String,
    pub error: Option<String>,
}

#[pymethods]
impl PyEpisode {
    fn __repr__(&self) -> String {
        format!("Episode(steps={}, stop={})", self.distances.len(), self.stop)
    }
}

/// Runs one closed-loop episode of `method` at a dataset cell.
#[pyfunction]
#[pyo3(signature = (dataset, cell, goal, method="irp", predictor=None, max_step=16, d_stop=0.02, world="training", seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_episode(
    py: Python<'_>,
    dataset: &PyDataset,
    cell: usize,
    goal: Vec<[f64; 2]>,
    method: &str,
    predictor: Option<&PyKnn>,
    max_step: usize,
    d_stop: f64,
    world: &str,
    seed: u64,
) -> PyResult<PyEpisode> {
    dataset.check_cell(cell)?;
    let g = goal_from(goal)?;
    let method: Method = parse(method)?;
    let mode: WorldMode = parse(world)?;
    let ds = dataset.inner.clone();
    let pred: Option<Arc<dyn Predictor>> = predictor.map(|p| p.inner.clone() as Arc<dyn Predictor>);
    let log = py
        .detach(|| {
            let mut kit = MethodKit::new(ds.clone());
            if matches!(method, Method::Irp | Method::ConstSigma) {
                kit.pred = Some(match pred {
                    Some(p) => p,
                    None => Arc::new(KnnPredictor::build(ds.clone(), KnnConfig::default())?),
                });
            }
            let ep_seed = derive_seed(seed, &[cell as u64]);
            let plant = make_plant(&ds, cell, mode, ep_seed)?;
            let ctrl = kit.controller(method, ds.params.values(cell), &plant)?;
            run_controller(plant.as_ref(), ctrl.as_ref(), &g, max_step, d_stop, ep_seed)
        })
        .map_err(to_py)?;
    Ok(PyEpisode {
        distances: log.distances(),
        actions: log.actions(),
        stop: log.stop.name().to_string(),
        error: log.error,
    })
}

/// Task metric between a trajectory (list of tracks) and a goal.
#[pyfunction]
fn distance(trajectory: Vec<Vec<[f64; 2]>>, goal: Vec<[f64; 2]>) -> PyResult<f64> {
    let g = goal_from(goal)?;
    let traj = Trajectory {
        tracks: trajectory
            .iter()
            .map(|t| Trajectory::from_points(t).tracks.remove(0))
            .collect(),
        final_keypoints: None,
    };
    match &g {
        Goal::Rope(_) => raster::min_distance(&traj, &g).map_err(to_py),
        Goal::Cloth(_) => {
            let last: Vec<[f64; 2]> = traj
                .tracks
                .iter()
                .map(|t| t.last().map(|p| p.yz()).unwrap_or([f64::NAN; 2]))
                .collect();
            raster::mean_keypoint_distance(&last, &g).map_err(to_py)
        }
    }
}

/// Occupancy image (rows of 0/1) of a trajectory on the default grid.
#[pyfunction]
#[pyo3(signature = (trajectory, resolution=None))]
fn rasterize(trajectory: Vec<Vec<[f64; 2]>>, resolution: Option<usize>) -> PyResult<Vec<Vec<Vec<f32>>>> {
    let channels = trajectory.len().max(1);
    let mut spec = GridSpec::new(channels);
    if let Some(r) = resolution {
        spec = spec.with_resolution(r);
    }
    spec.validate().map_err(to_py)?;
    let traj = Trajectory {
        tracks: trajectory
            .iter()
            .map(|t| Trajectory::from_points(t).tracks.remove(0))
            .collect(),
        final_keypoints: None,
    };
    let grid = raster::rasterize(&traj, &spec).map_err(to_py)?;
    Ok((0..spec.channels)
        .map(|c| grid.channel(c).chunks(spec.width).map(<[f32]>::to_vec).collect())
        .collect())
}

/// Symmetric chamfer distance between two occupancy images, in cells.
#[pyfunction]
fn chamfer(a: Vec<Vec<f32>>, b: Vec<Vec<f32>>) -> PyResult<f64> {
    let h = a.len();
    let w = a.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || b.len() != h || b.iter().chain(&a).any(|r| r.len() != w) {
        return Err(PyValueError::new_err("images must be non-empty and equally shaped"));
    }
    let on = |img: &[Vec<f32>]| -> Vec<u32> {
        img.iter()
            .flatten()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| i as u32)
            .collect()
    };
    Ok(raster::chamfer_cells(&on(&a), &on(&b), w, h))
}

#[pymodule]
#[pyo3(name = "irp")]
fn irp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPlant>()?;
    m.add_class::<PyKnn>()?;
    m.add_class::<PyEpisode>()?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    Ok(())
}
