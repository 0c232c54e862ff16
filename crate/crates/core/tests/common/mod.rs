//! Shared fixtures: datasets are generated once and cached on disk under
//! the target directory, keyed by their generation config.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use irp_core::dataset::{generate, Dataset, GenConfig};
use irp_core::params::WorldVariant;
use irp_core::Task;

pub fn cache_dir() -> PathBuf {
    let dir = std::env::var_os("IRP_TEST_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("irp-datasets"));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn matches(ds: &Dataset, cfg: &GenConfig) -> bool {
    ds.task == cfg.task
        && ds.params == cfg.params
        && ds.actions.dims == cfg.action_dims
        && ds.repeats == cfg.repeats
        && ds.world == cfg.world
        && ds.template == cfg.template
        && ds.grid_spec == cfg.grid_spec
        && ds.seed == cfg.seed
        && ds.splits.is_some()
}

/// Loads `<cache>/<name>.irpd` if it was generated from `cfg`, otherwise
/// generates, splits and stores it.
pub fn dataset(name: &str, cfg: &GenConfig) -> Arc<Dataset> {
    static MEMO: OnceLock<Mutex<HashMap<String, Arc<Dataset>>>> = OnceLock::new();
    let memo = MEMO.get_or_init(Default::default);
    let mut memo = memo.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(ds) = memo.get(name) {
        return ds.clone();
    }
    let path = cache_dir().join(format!("{name}.irpd"));
    let cached = Dataset::load(&path).ok().filter(|ds| matches(ds, cfg));
    let ds = Arc::new(match cached {
        Some(ds) => ds,
        None => {
            let mut ds = generate(cfg).unwrap();
            ds.split().unwrap();
            let tmp = path.with_extension("irpd.partial");
            ds.save(&tmp).unwrap();
            std::fs::rename(&tmp, &path).unwrap();
            ds
        }
    });
    memo.insert(name.to_string(), ds.clone());
    ds
}

/// Noiseless rope set: 5×5 parameters × 5³ actions, one repeat.
pub fn small_rope_config() -> GenConfig {
    let mut cfg = GenConfig::desk(Task::Rope, 11).with_param_dims(5, 5).unwrap();
    cfg.action_dims = vec![5, 5, 5];
    cfg.repeats = 1;
    cfg.world = WorldVariant::training();
    cfg
}

pub fn small_rope() -> Arc<Dataset> {
    dataset("small_rope", &small_rope_config())
}

/// Rope set used by the experiment-scale checks: 6×6 parameters × 9³
/// actions, noiseless, one repeat.
pub fn rope6_config() -> GenConfig {
    let mut cfg = GenConfig::desk(Task::Rope, 7).with_param_dims(6, 6).unwrap();
    cfg.repeats = 1;
    cfg.world = WorldVariant::training();
    cfg
}

pub fn rope6() -> Arc<Dataset> {
    dataset("rope6", &rope6_config())
}

/// Cloth set for the placement experiment: 6×6 cloths × 6³×4 actions.
pub fn cloth6_config() -> GenConfig {
    let mut cfg = GenConfig::desk(Task::Cloth, 7).with_param_dims(6, 6).unwrap();
    cfg.repeats = 1;
    cfg.world = WorldVariant::training();
    cfg
}

pub fn cloth6() -> Arc<Dataset> {
    dataset("cloth6", &cloth6_config())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)
}
