//! Nearest-neighbour delta dynamics over the training records.
//!
//! The observed grid is matched against every stored training grid: a cheap
//! one-sided chamfer (stored cells against the observation's distance
//! transform) picks a shortlist, the exact symmetric chamfer ranks it, and
//! the `k` best (parameter cell, action) pairs are kept. A delta is answered
//! per match from the stored records of the matched cell at the matched
//! action plus the delta, and the `k` answers are averaged cellwise.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model_io::ModelBlob;
use super::{Prediction, Predictor};
use crate::action::{DeltaAction, Task};
use crate::dataset::Dataset;
use crate::error::{IrpError, Result};
use crate::optim::nelder_mead;
use crate::raster::edt::squared_edt;
use crate::trajectory::Trajectory;
use crate::raster::{chamfer_cells, polyline_distance, track_cells, GridSpec, OccupancyGrid, SparseGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    /// Answer with the stored record at the grid action nearest to
    /// (matched action + δa).
    Snap,
    /// Answer with the time-aligned multilinear blend of the stored records
    /// around (matched action + δa); identical to `Snap` on grid points.
    Interpolate,
    /// Interpolated answer shifted by the observation's offset from the
    /// matched record, so a zero delta lands close to the observation and
    /// the training records mostly supply the change the delta causes. The
    /// offsets are smoothed, so stretches where the observation departs
    /// sharply from the match are only partly followed.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Candidates kept after the one-sided pass.
    pub shortlist: usize,
    pub mode: KnnMode,
    /// Refine each inexact match to a continuous action that best explains
    /// the observation (not in snap mode).
    pub refine: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 1,
            shortlist: 32,
            mode: KnnMode::Residual,
            refine: true,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.shortlist < self.k {
            return Err(IrpError::contract("knn needs k ≥ 1 and shortlist ≥ k"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    p: u32,
    a: u32,
    r: u16,
    cells: Vec<Vec<u32>>,
    /// Per channel distance map of the cells on a COARSE² grid, in coarse
    /// cells (saturating), for the reverse half of the shortlist score.
    coarse: Vec<Vec<u8>>,
}

/// Side of the coarse grid used by the shortlist pass.
const COARSE: usize = 32;

fn coarse_index(i: u32, spec: &GridSpec) -> usize {
    let (r, c) = (i as usize / spec.width, i as usize % spec.width);
    (r * COARSE / spec.height) * COARSE + c * COARSE / spec.width
}

fn coarse_cells(cells: &[u32], spec: &GridSpec) -> Vec<usize> {
    let mut v: Vec<usize> = cells.iter().map(|&i| coarse_index(i, spec)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn coarse_map(cells: &[u32], spec: &GridSpec) -> Vec<u8> {
    match squared_edt(coarse_cells(cells, spec), COARSE, COARSE) {
        Some(d) => d.into_iter().map(|x| x.sqrt().round().min(255.0) as u8).collect(),
        None => vec![u8::MAX; COARSE * COARSE],
    }
}

impl Entry {
    fn new(p: u32, a: u32, r: u16, cells: Vec<Vec<u32>>, spec: &GridSpec) -> Self {
        let coarse = cells.iter().map(|c| coarse_map(c, spec)).collect();
        Entry { p, a, r, cells, coarse }
    }
}

/// One matched training record and the action attributed to the
/// observation on that record's parameter cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub param_idx: usize,
    pub action_idx: usize,
    pub repeat: usize,
    /// Chamfer distance of the stored grid to the observation, m.
    pub chamfer: f64,
    /// Normalized action used as the origin of deltas.
    pub action: Vec<f64>,
}

pub struct KnnPredictor {
    ds: Arc<Dataset>,
    cfg: KnnConfig,
    spec: GridSpec,
    entries: Vec<Entry>,
}

/// Interpolated tracks and keypoints of one parameter cell and repeat at a
/// continuous action; `None` if every contributing record is invalid.
pub(crate) fn interpolate_record(
    ds: &Dataset,
    p: usize,
    r: usize,
    u: &[f64],
) -> Option<(Vec<Vec<[f64; 2]>>, Option<Vec<[f64; 2]>>)> {
    let dims = &ds.actions.dims;
    let n = dims.len();
    let mut base = vec![0usize; n];
    let mut frac = vec![0.0; n];
    for d in 0..n {
        let pos = u[d].clamp(0.0, 1.0) * (dims[d] - 1) as f64;
        let i0 = (pos.floor() as usize).min(dims[d] - 2);
        base[d] = i0;
        frac[d] = pos - i0 as f64;
    }
    let mut corners: Vec<(f64, &crate::dataset::Record)> = Vec::new();
    for mask in 0..(1usize << n) {
        let mut w = 1.0;
        let mut c = base.clone();
        for d in 0..n {
            if mask >> d & 1 == 1 {
                w *= frac[d];
                c[d] += 1;
            } else {
                w *= 1.0 - frac[d];
            }
        }
        if w == 0.0 {
            continue;
        }
        let rec = ds.record(p, ds.actions.index(&c), r);
        if rec.valid {
            corners.push((w, rec));
        }
    }
    let total: f64 = corners.iter().map(|c| c.0).sum();
    if corners.is_empty() || total <= 0.0 {
        return None;
    }
    if corners.len() == 1 {
        let rec = corners[0].1;
        return Some((
            (0..rec.tracks.len()).map(|c| rec.points(c)).collect(),
            rec.keypoints(),
        ));
    }
    let n_tracks = corners[0].1.tracks.len();
    let tracks = (0..n_tracks)
        .map(|c| {
            let len = corners.iter().map(|(_, rec)| rec.tracks[c].len()).max().unwrap_or(0);
            (0..len)
                .map(|j| {
                    let mut q = [0.0; 2];
                    for (w, rec) in &corners {
                        let tr = &rec.tracks[c];
                        let s = tr[j.min(tr.len() - 1)];
                        q[0] += w * s[1] as f64;
                        q[1] += w * s[2] as f64;
                    }
                    [q[0] / total, q[1] / total]
                })
                .collect()
        })
        .collect();
    let keypoints = corners[0].1.final_keypoints.as_ref().map(|k0| {
        (0..k0.len())
            .map(|i| {
                let mut q = [0.0; 2];
                for (w, rec) in &corners {
                    let k = &rec.final_keypoints.as_ref().unwrap()[i];
                    q[0] += w * k[0] as f64;
                    q[1] += w * k[1] as f64;
                }
                [q[0] / total, q[1] / total]
            })
            .collect()
    });
    Some((tracks, keypoints))
}

/// Half-width, in samples, of the moving average applied to residual
/// offsets; it suppresses the half-cell quantization of the observation.
const RESIDUAL_HALF_WINDOW: usize = 4;

/// Radius, in cells, of the neighbourhood averaged into an anchor point.
const ANCHOR_RADIUS: f64 = 1.5;

fn smooth(v: &[[f64; 2]], half: usize) -> Vec<[f64; 2]> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            let s = v[lo..hi].iter().fold([0.0, 0.0], |a, q| [a[0] + q[0], a[1] + q[1]]);
            let n = (hi - lo) as f64;
            [s[0] / n, s[1] / n]
        })
        .collect()
}

struct Observation {
    cells: Vec<Vec<u32>>,
    /// Per channel distance to the nearest observed cell, in cells.
    dist: Vec<Vec<f64>>,
}

impl KnnPredictor {
    pub fn build(ds: Arc<Dataset>, cfg: KnnConfig) -> Result<Self> {
        Self::build_filtered(ds, cfg, |_, _, _| true)
    }

    /// Builds over the training records accepted by `keep(p, a, r)`.
    pub fn build_filtered(
        ds: Arc<Dataset>,
        cfg: KnnConfig,
        keep: impl Fn(usize, usize, usize) -> bool + Sync,
    ) -> Result<Self> {
        cfg.validate()?;
        let train = ds.train_cells()?;
        let spec = ds.grid_spec;
        let (n_actions, repeats) = (ds.n_actions(), ds.repeats);
        let keys: Vec<(usize, usize, usize)> = train
            .iter()
            .flat_map(|&p| (0..n_actions).flat_map(move |a| (0..repeats).map(move |r| (p, a, r))))
            .filter(|&(p, a, r)| ds.record(p, a, r).valid && keep(p, a, r))
            .collect();
        if keys.is_empty() {
            return Err(IrpError::contract("knn needs at least one training record"));
        }
        let entries = keys
            .par_iter()
            .map(|&(p, a, r)| {
                let rec = ds.record(p, a, r);
                let cells = (0..rec.tracks.len())
                    .map(|c| track_cells(rec.points(c).into_iter(), &spec))
                    .collect();
                Entry::new(p as u32, a as u32, r as u16, cells, &spec)
            })
            .collect();
        Ok(KnnPredictor { ds, cfg, spec, entries })
    }

    pub fn config(&self) -> &KnnConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.ds
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    fn observe(&self, observed: &OccupancyGrid) -> Result<Observation> {
        if observed.spec != self.spec {
            return Err(IrpError::contract("observed grid spec differs from the dataset's"));
        }
        let cells: Vec<Vec<u32>> = (0..self.spec.channels).map(|c| observed.on_cells(c)).collect();
        let dist = cells
            .iter()
            .map(|c| {
                squared_edt(c.iter().map(|&i| i as usize), self.spec.height, self.spec.width)
                    .map(|d| d.into_iter().map(f64::sqrt).collect())
                    .ok_or_else(|| IrpError::contract("observed grid has an empty channel"))
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Observation { cells, dist })
    }

    /// The `k` best training records for an observation, best first.
    pub fn matches(&self, observed: &OccupancyGrid) -> Result<Vec<Match>> {
        let obs = self.observe(observed)?;
        Ok(self.match_observation(&obs))
    }

    fn match_observation(&self, obs: &Observation) -> Vec<Match> {
        let nc = self.spec.channels as f64;
        let obs_coarse: Vec<Vec<usize>> = obs.cells.iter().map(|c| coarse_cells(c, &self.spec)).collect();
        let scale = self.spec.width as f64 / COARSE as f64;
        let mut coarse: Vec<(f64, usize)> = self
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let s: f64 = (0..e.cells.len())
                    .map(|c| {
                        let cells = &e.cells[c];
                        if cells.is_empty() {
                            return f64::INFINITY;
                        }
                        let d = &obs.dist[c];
                        let fwd = cells.iter().map(|&j| d[j as usize]).sum::<f64>() / cells.len() as f64;
                        let oc = &obs_coarse[c];
                        let rev = oc.iter().map(|&j| e.coarse[c][j] as f64).sum::<f64>() / oc.len().max(1) as f64;
                        0.5 * (fwd + scale * rev)
                    })
                    .sum();
                (s / nc, i)
            })
            .collect();
        let by_score = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let keep = self.cfg.shortlist.min(coarse.len());
        if keep < coarse.len() {
            coarse.select_nth_unstable_by(keep - 1, by_score);
            coarse.truncate(keep);
        }
        let mut fine: Vec<(f64, usize)> = coarse
            .par_iter()
            .map(|&(_, i)| {
                let e = &self.entries[i];
                let s: f64 = e
                    .cells
                    .iter()
                    .zip(&obs.cells)
                    .map(|(a, b)| chamfer_cells(a, b, self.spec.width, self.spec.height))
                    .sum();
                (s / nc * self.spec.cell_size(), i)
            })
            .collect();
        fine.sort_by(by_score);
        fine.truncate(self.cfg.k);
        fine.par_iter()
            .map(|&(chamfer, i)| {
                let e = &self.entries[i];
                let (p, a, r) = (e.p as usize, e.a as usize, e.r as usize);
                let mut action = self.ds.actions.action(a);
                if self.cfg.refine && self.cfg.mode != KnnMode::Snap && chamfer > 0.0 {
                    action = self.refine(obs, p, r, &action);
                }
                Match {
                    param_idx: p,
                    action_idx: a,
                    repeat: r,
                    chamfer,
                    action,
                }
            })
            .collect()
    }

    /// Continuous action within one grid step of `a0` whose interpolated
    /// trajectory best fits the observed cells.
    fn refine(&self, obs: &Observation, p: usize, r: usize, a0: &[f64]) -> Vec<f64> {
        let spec = self.spec;
        let cs = spec.cell_size();
        let w = spec.width;
        let obs_pts: Vec<Vec<[f64; 2]>> = obs
            .cells
            .iter()
            .map(|cells| {
                let stride = cells.len().div_ceil(256).max(1);
                cells
                    .iter()
                    .step_by(stride)
                    .map(|&i| spec.cell_center(i as usize / w, i as usize % w))
                    .collect()
            })
            .collect();
        let objective = |u: &[f64]| -> f64 {
            let Some((tracks, _)) = interpolate_record(&self.ds, p, r, u) else {
                return f64::INFINITY;
            };
            let mut total = 0.0;
            for (c, track) in tracks.iter().enumerate() {
                let stride = track.len().div_ceil(200).max(1);
                let mut pts: Vec<[f64; 2]> = track.iter().step_by(stride).copied().collect();
                if let Some(last) = track.last() {
                    if pts.last() != Some(last) {
                        pts.push(*last);
                    }
                }
                let to_track = obs_pts[c].iter().map(|&o| polyline_distance(&pts, o)).sum::<f64>()
                    / obs_pts[c].len().max(1) as f64;
                let to_obs = pts
                    .iter()
                    .map(|&q| {
                        let ((row, col), _) = spec.cell_of(q);
                        obs.dist[c][row * w + col] * cs
                    })
                    .sum::<f64>()
                    / pts.len().max(1) as f64;
                total += 0.5 * (to_track + to_obs);
            }
            total / tracks.len().max(1) as f64
        };
        let steps: Vec<f64> = (0..a0.len()).map(|d| self.ds.actions.step(d)).collect();
        let lo: Vec<f64> = a0.iter().zip(&steps).map(|(&x, &s)| (x - s).max(0.0)).collect();
        let hi: Vec<f64> = a0.iter().zip(&steps).map(|(&x, &s)| (x + s).min(1.0)).collect();
        let h = 0.5 * steps.iter().cloned().fold(f64::INFINITY, f64::min);
        let f0 = objective(a0);
        let (x, fx) = nelder_mead(objective, a0, h, &lo, &hi, 80);
        if fx < f0 {
            x
        } else {
            a0.to_vec()
        }
    }

    /// Answer for one match at normalized action `u`: on-cells and keypoints.
    fn answer(&self, m: &Match, u: &[f64]) -> Option<(Vec<Vec<u32>>, Option<Vec<[f64; 2]>>)> {
        match self.cfg.mode {
            KnnMode::Snap => {
                let a = self.ds.actions.nearest(u);
                let rec = self.ds.record(m.param_idx, a, m.repeat);
                if !rec.valid {
                    return None;
                }
                let cells = (0..rec.tracks.len())
                    .map(|c| track_cells(rec.points(c).into_iter(), &self.spec))
                    .collect();
                Some((cells, rec.keypoints()))
            }
            KnnMode::Interpolate | KnnMode::Residual => {
                let (tracks, kp) = interpolate_record(&self.ds, m.param_idx, m.repeat, u)?;
                let cells = tracks
                    .iter()
                    .map(|t| track_cells(t.iter().copied(), &self.spec))
                    .collect();
                Some((cells, kp))
            }
        }
    }

    fn predict_matched(&self, matches: &[Match], delta: &DeltaAction) -> Result<Prediction> {
        let mut sets = Vec::with_capacity(matches.len());
        let mut kps: Vec<Vec<[f64; 2]>> = Vec::new();
        for m in matches {
            if delta.dim() != m.action.len() {
                return Err(IrpError::contract(format!(
                    "delta has {} components, action has {}",
                    delta.dim(),
                    m.action.len()
                )));
            }
            let u: Vec<f64> = m
                .action
                .iter()
                .zip(delta.as_slice())
                .map(|(a, d)| (a + d).clamp(0.0, 1.0))
                .collect();
            if let Some((cells, kp)) = self.answer(m, &u) {
                sets.push(cells);
                if let Some(k) = kp {
                    kps.push(k);
                }
            }
        }
        let final_keypoints = if self.ds.task == Task::Cloth && !kps.is_empty() {
            let n = kps.len() as f64;
            Some(
                (0..kps[0].len())
                    .map(|i| {
                        let s = kps.iter().fold([0.0, 0.0], |acc, k| [acc[0] + k[i][0], acc[1] + k[i][1]]);
                        [s[0] / n, s[1] / n]
                    })
                    .collect(),
            )
        } else {
            None
        };
        // Averaging over all k matches (not just the valid answers) keeps
        // cell values on the 1/k lattice.
        let mut grid = SparseGrid::average_of(self.spec, &sets);
        if !sets.is_empty() && sets.len() < matches.len() {
            let scale = sets.len() as f32 / matches.len() as f32;
            for ch in grid.channels.iter_mut() {
                for (_, v) in ch.iter_mut() {
                    *v *= scale;
                }
            }
        }
        Ok(Prediction {
            grid,
            final_keypoints,
            trajectory: None,
            provenance: "knn",
        })
    }

    /// Per-sample offset from the matched record (at the matched action) to
    /// the nearest observed cell, smoothed along time.
    fn offsets(&self, obs: &Observation, m: &Match) -> Option<Vec<Vec<[f64; 2]>>> {
        let (tracks, _) = interpolate_record(&self.ds, m.param_idx, m.repeat, &m.action)?;
        let spec = self.spec;
        let w = spec.width;
        Some(
            tracks
                .iter()
                .zip(&obs.cells)
                .map(|(track, cells)| {
                    let centers: Vec<[f64; 2]> = cells
                        .iter()
                        .map(|&i| spec.cell_center(i as usize / w, i as usize % w))
                        .collect();
                    let raw: Vec<[f64; 2]> = track
                        .iter()
                        .map(|&q| {
                            let d2 = |a: &[f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                            let Some(near) = centers.iter().min_by(|a, b| d2(a, q).total_cmp(&d2(b, q))).copied() else {
                                return [0.0, 0.0];
                            };
                            // centroid of the observed cells around the nearest one
                            // recovers the curve's centerline below cell resolution
                            let r2 = (ANCHOR_RADIUS * spec.cell_size()).powi(2);
                            let (mut sum, mut n) = ([0.0, 0.0], 0.0);
                            for c in centers.iter().filter(|c| d2(c, near) <= r2) {
                                sum[0] += c[0];
                                sum[1] += c[1];
                                n += 1.0;
                            }
                            let o = [sum[0] / n, sum[1] / n];
                            [o[0] - q[0], o[1] - q[1]]
                        })
                        .collect();
                    smooth(&raw, RESIDUAL_HALF_WINDOW)
                })
                .collect(),
        )
    }

    fn predict_residual(&self, matches: &[Match], offsets: &[Option<Vec<Vec<[f64; 2]>>>], delta: &DeltaAction) -> Result<Prediction> {
        let mut answers: Vec<(Vec<Vec<[f64; 2]>>, Option<Vec<[f64; 2]>>)> = Vec::new();
        for (m, off) in matches.iter().zip(offsets) {
            if delta.dim() != m.action.len() {
                return Err(IrpError::contract(format!(
                    "delta has {} components, action has {}",
                    delta.dim(),
                    m.action.len()
                )));
            }
            let Some(off) = off else { continue };
            let u: Vec<f64> = m
                .action
                .iter()
                .zip(delta.as_slice())
                .map(|(a, d)| (a + d).clamp(0.0, 1.0))
                .collect();
            let Some((tracks, kp)) = interpolate_record(&self.ds, m.param_idx, m.repeat, &u) else {
                continue;
            };
            let shifted: Vec<Vec<[f64; 2]>> = tracks
                .iter()
                .zip(off)
                .map(|(t, o)| {
                    t.iter()
                        .enumerate()
                        .map(|(j, q)| {
                            let r = o.get(j).or(o.last()).copied().unwrap_or([0.0, 0.0]);
                            [q[0] + r[0], q[1] + r[1]]
                        })
                        .collect()
                })
                .collect();
            // each keypoint follows the settled end of its own track
            let kp = kp.map(|k| {
                k.iter()
                    .enumerate()
                    .map(|(c, q)| {
                        let r = off.get(c).and_then(|o| o.last()).copied().unwrap_or([0.0, 0.0]);
                        [q[0] + r[0], q[1] + r[1]]
                    })
                    .collect()
            });
            answers.push((shifted, kp));
        }
        if answers.is_empty() {
            return Ok(Prediction {
                grid: SparseGrid::empty(self.spec),
                final_keypoints: None,
                trajectory: None,
                provenance: "knn",
            });
        }
        let n = answers.len() as f64;
        let tracks: Vec<Vec<[f64; 2]>> = (0..answers[0].0.len())
            .map(|c| {
                let len = answers.iter().map(|a| a.0[c].len()).max().unwrap_or(0);
                (0..len)
                    .map(|j| {
                        let s = answers.iter().fold([0.0, 0.0], |acc, a| {
                            let t = &a.0[c];
                            let q = t[j.min(t.len() - 1)];
                            [acc[0] + q[0], acc[1] + q[1]]
                        });
                        [s[0] / n, s[1] / n]
                    })
                    .collect()
            })
            .collect();
        let kps: Vec<&Vec<[f64; 2]>> = answers.iter().filter_map(|a| a.1.as_ref()).collect();
        let final_keypoints = (self.ds.task == Task::Cloth && !kps.is_empty()).then(|| {
            let m = kps.len() as f64;
            (0..kps[0].len())
                .map(|i| {
                    let s = kps.iter().fold([0.0, 0.0], |acc, k| [acc[0] + k[i][0], acc[1] + k[i][1]]);
                    [s[0] / m, s[1] / m]
                })
                .collect()
        });
        let cells = tracks.iter().map(|t| track_cells(t.iter().copied(), &self.spec)).collect();
        let trajectory = (self.ds.task == Task::Rope).then(|| Trajectory::from_points(&tracks[0]));
        Ok(Prediction {
            grid: SparseGrid::from_cells(self.spec, cells),
            final_keypoints,
            trajectory,
            provenance: "knn",
        })
    }

    pub fn to_blob(&self) -> ModelBlob {
        let mut payload = Vec::new();
        payload.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            payload.extend_from_slice(&e.p.to_le_bytes());
            payload.extend_from_slice(&e.a.to_le_bytes());
            payload.extend_from_slice(&e.r.to_le_bytes());
            payload.push(e.cells.len() as u8);
            for c in &e.cells {
                payload.extend_from_slice(&(c.len() as u32).to_le_bytes());
                for &i in c {
                    payload.extend_from_slice(&i.to_le_bytes());
                }
            }
        }
        ModelBlob::new(
            "knn",
            serde_json::json!({"config": self.cfg, "dataset_hash": self.ds.hash()}),
            payload,
        )
    }

    /// Restores a saved index; the dataset must be the one it was built on.
    pub fn from_blob(blob: &ModelBlob, ds: Arc<Dataset>) -> Result<Self> {
        blob.expect_tag("knn")?;
        let cfg: KnnConfig = serde_json::from_value(blob.hyper["config"].clone())
            .map_err(|e| IrpError::format(format!("knn config: {e}")))?;
        if blob.hyper["dataset_hash"].as_str() != Some(ds.hash().as_str()) {
            return Err(IrpError::contract("knn model was built on a different dataset"));
        }
        let b = &blob.payload;
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = b
                .get(at..at + n)
                .ok_or_else(|| IrpError::format("truncated knn payload"))?;
            at += n;
            Ok(s)
        };
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let p = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let a = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let r = u16::from_le_bytes(take(2)?.try_into().unwrap());
            let nc = take(1)?[0] as usize;
            let mut cells = Vec::with_capacity(nc);
            for _ in 0..nc {
                let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
                let raw = take(4 * len)?;
                cells.push(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                );
            }
            entries.push((p, a, r, cells));
        }
        let spec = ds.grid_spec;
        let entries = entries
            .into_par_iter()
            .map(|(p, a, r, cells)| Entry::new(p, a, r, cells, &spec))
            .collect();
        Ok(KnnPredictor { spec, ds, cfg, entries })
    }
}

impl Predictor for KnnPredictor {
    fn tag(&self) -> &'static str {
        "knn"
    }

    fn task(&self) -> Task {
        self.ds.task
    }

    fn predict_batch(&self, observed: &OccupancyGrid, deltas: &[DeltaAction]) -> Result<Vec<Prediction>> {
        let obs = self.observe(observed)?;
        let matches = self.match_observation(&obs);
        if self.cfg.mode == KnnMode::Residual {
            let offsets: Vec<_> = matches.iter().map(|m| self.offsets(&obs, m)).collect();
            return deltas
                .par_iter()
                .map(|d| self.predict_residual(&matches, &offsets, d))
                .collect();
        }
        deltas
            .par_iter()
            .map(|d| self.predict_matched(&matches, d))
            .collect()
    }
}
