//! Occupancy-grid trajectory representation and the distance functions used
//! for action selection and evaluation.

pub mod edt;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IrpError, Result};
use crate::trajectory::{Goal, Trajectory, WINDOW_HALF_WIDTH};

/// Square Y-Z observation window rasterized to `height × width` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Half-width of the window, m.
    pub extent: f64,
    /// Window center (Y, Z), m.
    pub origin: [f64; 2],
}

impl GridSpec {
    pub fn new(channels: usize) -> Self {
        GridSpec {
            height: 256,
            width: 256,
            channels,
            extent: WINDOW_HALF_WIDTH,
            origin: [0.0, 0.0],
        }
    }

    pub fn with_resolution(self, cells: usize) -> Self {
        GridSpec {
            height: cells,
            width: cells,
            ..self
        }
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.extent / self.width as f64
    }

    fn cell_h(&self) -> f64 {
        2.0 * self.extent / self.height as f64
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().hypot(self.cell_h())
    }

    pub fn n_cells(&self) -> usize {
        self.height * self.width
    }

    /// Cell containing a point, clamped to the window; the flag reports
    /// whether clamping happened.
    pub fn cell_of(&self, p: [f64; 2]) -> ((usize, usize), bool) {
        let col = ((p[0] - (self.origin[0] - self.extent)) / self.cell_size()).floor();
        let row = ((self.origin[1] + self.extent - p[1]) / self.cell_h()).floor();
        let clamp = |x: f64, n: usize| -> (usize, bool) {
            if x.is_nan() || x < 0.0 {
                (0, true)
            } else if x > (n - 1) as f64 {
                (n - 1, true)
            } else {
                (x as usize, false)
            }
        };
        let (r, cr) = clamp(row, self.height);
        let (c, cc) = clamp(col, self.width);
        ((r, c), cr || cc)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] - self.extent + (col as f64 + 0.5) * self.cell_size(),
            self.origin[1] + self.extent - (row as f64 + 0.5) * self.cell_h(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 || !(self.extent > 0.0) {
            return Err(IrpError::contract("degenerate grid spec"));
        }
        Ok(())
    }
}

/// `channels × height × width` occupancy probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub data: Vec<f32>,
}

impl OccupancyGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        OccupancyGrid {
            spec,
            data: vec![0.0; spec.channels * spec.n_cells()],
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spec.n_cells();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.spec.n_cells();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[c * self.spec.n_cells() + row * self.spec.width + col]
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Non-zero cells of a channel as row-major indices.
    pub fn on_cells(&self, c: usize) -> Vec<u32> {
        self.channel(c)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn from_sparse(spec: GridSpec, cells: &[Vec<u32>]) -> Self {
        let mut g = OccupancyGrid::zeros(spec);
        for (c, list) in cells.iter().enumerate() {
            let ch = g.channel_mut(c);
            for &i in list {
                ch[i as usize] = 1.0;
            }
        }
        g
    }

    /// Binary grid of the cells at or above `threshold`.
    pub fn threshold(&self, threshold: f32) -> OccupancyGrid {
        OccupancyGrid {
            spec: self.spec,
            data: self
                .data
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Grid stored as per-channel `(cell, value)` lists sorted by cell, for
/// predictions that are mostly empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGrid {
    pub spec: GridSpec,
    pub channels: Vec<Vec<(u32, f32)>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::new(1)
    }
}

impl SparseGrid {
    pub fn empty(spec: GridSpec) -> Self {
        SparseGrid {
            spec,
            channels: vec![Vec::new(); spec.channels],
        }
    }

    pub fn from_dense(g: &OccupancyGrid) -> Self {
        SparseGrid {
            spec: g.spec,
            channels: (0..g.spec.channels)
                .map(|c| {
                    g.channel(c)
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v > 0.0)
                        .map(|(i, &v)| (i as u32, v))
                        .collect()
                })
                .collect(),
        }
    }

    /// Binary grid from on-cell lists.
    pub fn from_cells(spec: GridSpec, cells: Vec<Vec<u32>>) -> Self {
        SparseGrid {
            spec,
            channels: cells
                .into_iter()
                .map(|mut c| {
                    c.sort_unstable();
                    c.dedup();
                    c.into_iter().map(|i| (i, 1.0)).collect()
                })
                .collect(),
        }
    }

    /// Cellwise mean of binary cell sets: a cell on in `m` of `n` sets gets
    /// `m / n`.
    pub fn average_of(spec: GridSpec, sets: &[Vec<Vec<u32>>]) -> Self {
        let n = sets.len().max(1) as f32;
        let channels = (0..spec.channels)
            .map(|c| {
                let mut all: Vec<u32> = Vec::new();
                for s in sets {
                    let mut cs = s[c].clone();
                    cs.sort_unstable();
                    cs.dedup();
                    all.extend(cs);
                }
                all.sort_unstable();
                let mut out: Vec<(u32, f32)> = Vec::new();
                for i in all {
                    match out.last_mut() {
                        Some((j, v)) if *j == i => *v += 1.0,
                        _ => out.push((i, 1.0)),
                    }
                }
                for (_, v) in out.iter_mut() {
                    *v /= n;
                }
                out
            })
            .collect();
        SparseGrid { spec, channels }
    }

    pub fn to_dense(&self) -> OccupancyGrid {
        let mut g = OccupancyGrid::zeros(self.spec);
        for (c, list) in self.channels.iter().enumerate() {
            let ch = g.channel_mut(c);
            for &(i, v) in list {
                ch[i as usize] = v;
            }
        }
        g
    }

    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.channels.iter().flatten().map(|&(_, v)| v)
    }

    /// True if no cell in any channel reaches the threshold.
    pub fn is_empty_at(&self, threshold: f64) -> bool {
        !self.values().any(|v| v as f64 >= threshold)
    }

    /// Distance from a point to the nearest supra-threshold cell center of
    /// one channel; `+∞` when none passes.
    pub fn channel_min_distance(&self, c: usize, p: [f64; 2], threshold: f64) -> f64 {
        let t = threshold as f32;
        let w = self.spec.width;
        self.channels[c]
            .iter()
            .filter(|&&(_, v)| v >= t)
            .map(|&(i, _)| {
                let q = self.spec.cell_center(i as usize / w, i as usize % w);
                (q[0] - p[0]).hypot(q[1] - p[1])
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Sparse counterpart of [`grid_min_distance`] over all channels.
    pub fn min_distance(&self, g: &Goal, threshold: f64) -> Result<f64> {
        let p = g.rope_point()?;
        Ok((0..self.spec.channels)
            .map(|c| self.channel_min_distance(c, p, threshold))
            .fold(f64::INFINITY, f64::min))
    }
}

/// On-cells of each track of a trajectory (rasterized, clipped silently).
pub fn trajectory_cells(traj: &Trajectory, spec: &GridSpec) -> Vec<Vec<u32>> {
    traj.tracks
        .iter()
        .map(|track| track_cells(track.iter().map(|p| p.yz()), spec))
        .collect()
}

/// Rasterized on-cells of one polyline, sorted and deduplicated.
pub fn track_cells(points: impl Iterator<Item = [f64; 2]>, spec: &GridSpec) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    let mut last: Option<(usize, usize)> = None;
    let w = spec.width;
    let put = |r: usize, c: usize, out: &mut Vec<u32>| out.push((r * w + c) as u32);
    for p in points {
        let (cell, _) = spec.cell_of(p);
        match last {
            None => put(cell.0, cell.1, &mut out),
            Some(prev) => line_cells(prev, cell, |r, c| put(r, c, &mut out)),
        }
        last = Some(cell);
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn line_cells(a: (usize, usize), b: (usize, usize), mut f: impl FnMut(usize, usize)) {
    let (mut r0, mut c0) = (a.0 as i64, a.1 as i64);
    let (r1, c1) = (b.0 as i64, b.1 as i64);
    let dr = (r1 - r0).abs();
    let dc = (c1 - c0).abs();
    let sr = if r0 < r1 { 1 } else { -1 };
    let sc = if c0 < c1 { 1 } else { -1 };
    let mut err = dc - dr;
    loop {
        f(r0 as usize, c0 as usize);
        if r0 == r1 && c0 == c1 {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dr {
            err -= dr;
            c0 += sc;
        }
        if e2 < dc {
            err += dc;
            r0 += sr;
        }
    }
}

/// 8-connected cells of the segment between two cells (Bresenham).
fn draw_line(ch: &mut [f32], width: usize, a: (usize, usize), b: (usize, usize)) {
    line_cells(a, b, |r, c| ch[r * width + c] = 1.0);
}

/// Rasterizes a trajectory and reports how many points fell outside the
/// window (those are clamped to its edge).
pub fn rasterize_counted(traj: &Trajectory, spec: &GridSpec) -> Result<(OccupancyGrid, usize)> {
    if spec.channels != traj.n_tracks() {
        return Err(IrpError::contract(format!(
            "grid has {} channels, trajectory has {} tracks",
            spec.channels,
            traj.n_tracks()
        )));
    }
    let mut grid = OccupancyGrid::zeros(*spec);
    let mut clipped = 0;
    for (c, track) in traj.tracks.iter().enumerate() {
        let ch = grid.channel_mut(c);
        let mut last = None;
        for p in track {
            let (cell, was_clipped) = spec.cell_of(p.yz());
            clipped += usize::from(was_clipped);
            match last {
                None => ch[cell.0 * spec.width + cell.1] = 1.0,
                Some(prev) => draw_line(ch, spec.width, prev, cell),
            }
            last = Some(cell);
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} trajectory points clipped to the observation window");
    }
    Ok((grid, clipped))
}

pub fn rasterize(traj: &Trajectory, spec: &GridSpec) -> Result<OccupancyGrid> {
    rasterize_counted(traj, spec).map(|(g, _)| g)
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

/// Exact distance from a point to a polyline; `+∞` for an empty polyline.
pub fn polyline_distance(points: &[[f64; 2]], g: [f64; 2]) -> f64 {
    match points {
        [] => f64::INFINITY,
        [p] => (p[0] - g[0]).hypot(p[1] - g[1]),
        _ => points
            .windows(2)
            .map(|w| point_segment_distance(g, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Rope metric: minimum distance from the goal to the tip polyline.
pub fn min_distance(traj: &Trajectory, g: &Goal) -> Result<f64> {
    let goal = g.rope_point()?;
    if traj.n_tracks() != 1 {
        return Err(IrpError::contract("rope distance needs a single-track trajectory"));
    }
    Ok(polyline_distance(&traj.points(0), goal))
}

/// Distance from the goal to the nearest cell center at or above
/// `threshold`; `+∞` when no cell passes.
pub fn grid_min_distance(grid: &OccupancyGrid, g: &Goal, threshold: f64) -> Result<f64> {
    let goal = g.rope_point()?;
    let spec = &grid.spec;
    let t = threshold as f32;
    let mut best = f64::INFINITY;
    for c in 0..spec.channels {
        for (i, &v) in grid.channel(c).iter().enumerate() {
            if v >= t {
                let p = spec.cell_center(i / spec.width, i % spec.width);
                let d = (p[0] - goal[0]).hypot(p[1] - goal[1]);
                best = best.min(d);
            }
        }
    }
    Ok(best)
}

/// Cloth metric: mean Euclidean distance between index-matched keypoints.
pub fn mean_keypoint_distance(final_kp: &[[f64; 2]], g: &Goal) -> Result<f64> {
    let target = g.cloth_keypoints()?;
    if final_kp.len() != target.len() {
        return Err(IrpError::contract(format!(
            "{} keypoints against a {}-point goal",
            final_kp.len(),
            target.len()
        )));
    }
    Ok(final_kp
        .iter()
        .zip(target)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum::<f64>()
        / target.len() as f64)
}

/// Mean distance (cells) from each cell of `from` to the nearest of `to`.
fn directed_mean(from: &[u32], to: &[u32], width: usize, height: usize) -> f64 {
    // Brute force is cheaper than a transform for small sets.
    if (from.len() * to.len()) < 4 * width * height {
        let coords = |i: u32| ((i as usize / width) as f64, (i as usize % width) as f64);
        let to_c: Vec<(f64, f64)> = to.iter().map(|&i| coords(i)).collect();
        from.iter()
            .map(|&i| {
                let (r, c) = coords(i);
                to_c.iter()
                    .map(|(tr, tc)| (r - tr).powi(2) + (c - tc).powi(2))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum::<f64>()
            / from.len() as f64
    } else {
        let dt = edt::squared_edt(to.iter().map(|&i| i as usize), height, width)
            .expect("non-empty target set");
        from.iter().map(|&i| dt[i as usize].sqrt()).sum::<f64>() / from.len() as f64
    }
}

/// Symmetric chamfer distance between two cell sets, in cells; `+∞` when
/// either set is empty.
pub fn chamfer_cells(a: &[u32], b: &[u32], width: usize, height: usize) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    0.5 * (directed_mean(a, b, width, height) + directed_mean(b, a, width, height))
}

/// Symmetric mean nearest-cell distance between the non-zero cells of two
/// grids, per channel and averaged over channels, in meters. `+∞` if any
/// channel is empty on either side.
pub fn chamfer(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64> {
    if a.spec != b.spec {
        return Err(IrpError::contract("chamfer needs grids with the same spec"));
    }
    let spec = a.spec;
    let mut total = 0.0;
    for c in 0..spec.channels {
        total += chamfer_cells(&a.on_cells(c), &b.on_cells(c), spec.width, spec.height);
    }
    Ok(total / spec.channels as f64 * spec.cell_size())
}

/// `k` points equally spaced in arc length along track 0, endpoints kept.
pub fn resample_polyline(traj: &Trajectory, k: usize) -> Result<Vec<[f64; 2]>> {
    let pts = traj
        .tracks
        .first()
        .map(|t| t.iter().map(|p| p.yz()).collect::<Vec<_>>())
        .unwrap_or_default();
    resample_points(&pts, k)
}

pub fn resample_points(pts: &[[f64; 2]], k: usize) -> Result<Vec<[f64; 2]>> {
    if pts.is_empty() {
        return Err(IrpError::contract("cannot resample an empty track"));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k == 1 {
        return Ok(vec![pts[0]]);
    }
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return Ok(vec![pts[0]; k]);
    }
    let mut out = Vec::with_capacity(k);
    let mut seg = 0usize;
    for i in 0..k {
        let s = total * i as f64 / (k - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    *out.last_mut().unwrap() = *pts.last().unwrap();
    Ok(out)
}

/// Writes each channel as an 8-bit binary PGM (`<stem>_c<k>.pgm`).
pub fn write_pgm(grid: &OccupancyGrid, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let spec = grid.spec;
    let mut paths = Vec::new();
    for c in 0..spec.channels {
        let path = dir.join(format!("{stem}_c{c}.pgm"));
        let mut bytes = format!("P5\n{} {}\n255\n", spec.width, spec.height).into_bytes();
        bytes.extend(
            grid.channel(c)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        std::fs::File::create(&path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| IrpError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn spec() -> GridSpec {
        GridSpec::new(1)
    }

    fn random_traj(rng: &mut RngStream) -> Trajectory {
        let n = 2 + rng.index(40);
        let mut p = [rng.uniform() * 4.0 - 2.0, rng.uniform() * 4.0 - 2.0];
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                p = [
                    (p[0] + 0.3 * rng.normal()).clamp(-2.9, 2.9),
                    (p[1] + 0.3 * rng.normal()).clamp(-2.9, 2.9),
                ];
                p
            })
            .collect();
        Trajectory::from_points(&pts)
    }

    #[test]
    fn default_cell_matches_reported_pixel() {
        let s = spec();
        assert!((s.cell_size() - 0.0234375).abs() < 1e-12);
    }

    #[test]
    fn center_point_lands_mid_grid() {
        let g = rasterize(&Trajectory::from_points(&[[0.0, 0.0]]), &spec()).unwrap();
        assert_eq!(g.count_on(), 1);
        assert_eq!(g.get(0, 128, 128), 1.0);
    }

    #[test]
    fn diagonal_is_eight_connected() {
        let e = 3.0 - 1e-9;
        let g = rasterize(&Trajectory::from_points(&[[-e, -e], [e, e]]), &spec()).unwrap();
        let n = g.count_on();
        assert!((256..=512).contains(&n), "{n} cells");
    }

    #[test]
    fn empty_track_is_blank() {
        let g = rasterize(&Trajectory::single(vec![]), &spec()).unwrap();
        assert_eq!(g.count_on(), 0);
        let two = GridSpec::new(2);
        assert!(rasterize(&Trajectory::single(vec![]), &two).is_err());
    }

    #[test]
    fn out_of_window_points_are_clamped() {
        let (g, clipped) =
            rasterize_counted(&Trajectory::from_points(&[[5.0, 0.0], [0.0, -7.0]]), &spec()).unwrap();
        assert_eq!(clipped, 2);
        assert_eq!(g.get(0, 128, 255), 1.0);
        assert_eq!(g.get(0, 255, 128), 1.0);
    }

    #[test]
    fn polyline_distance_examples() {
        let t = Trajectory::from_points(&[[0.0, 0.0], [0.0, 2.0]]);
        assert_eq!(min_distance(&t, &Goal::Rope([0.0, 2.0])).unwrap(), 0.0);
        assert!((min_distance(&t, &Goal::Rope([1.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((min_distance(&t, &Goal::Rope([0.0, 3.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!(min_distance(&t, &Goal::Cloth(vec![[0.0; 2]; 9])).is_err());
    }

    #[test]
    fn grid_distance_examples() {
        let s = spec();
        let g = rasterize(&Trajectory::from_points(&[[0.0, 0.0]]), &s).unwrap();
        let center = s.cell_center(128, 128);
        let d = grid_min_distance(&g, &Goal::Rope(center), 0.2).unwrap();
        assert!(d <= 0.5 * s.cell_diagonal());
        let d0 = grid_min_distance(&g, &Goal::Rope([0.0, 0.0]), 0.2).unwrap();
        assert!(d0 <= 0.5 * s.cell_diagonal() + 1e-12);
        let blank = OccupancyGrid::zeros(s);
        assert_eq!(grid_min_distance(&blank, &Goal::Rope([0.0, 0.0]), 0.2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn grid_distance_tracks_exact_distance() {
        let s = spec();
        let mut rng = RngStream::new(11, "raster");
        for _ in 0..100 {
            let t = random_traj(&mut rng);
            let g = Goal::Rope([rng.uniform() * 5.0 - 2.5, rng.uniform() * 5.0 - 2.5]);
            let grid = rasterize(&t, &s).unwrap();
            let exact = min_distance(&t, &g).unwrap();
            let approx = grid_min_distance(&grid, &g, 0.2).unwrap();
            assert!((exact - approx).abs() <= s.cell_diagonal(), "{exact} vs {approx}");
            // every sample is within one cell diagonal of an on-cell
            for p in &t.tracks[0] {
                let d = grid_min_distance(&grid, &Goal::Rope(p.yz()), 0.5).unwrap();
                assert!(d <= s.cell_diagonal());
            }
        }
    }

    #[test]
    fn grid_distance_monotone_in_threshold() {
        let s = spec().with_resolution(32);
        let mut rng = RngStream::new(3, "mono");
        let mut grid = OccupancyGrid::zeros(s);
        for v in grid.data.iter_mut() {
            if rng.uniform() < 0.05 {
                *v = rng.uniform() as f32;
            }
        }
        let g = Goal::Rope([0.3, -0.7]);
        let mut last = 0.0;
        for i in 1..10 {
            let d = grid_min_distance(&grid, &g, i as f64 / 10.0).unwrap();
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn keypoint_distance_examples() {
        let goal: Vec<[f64; 2]> = (0..9).map(|i| [i as f64 * 0.1, 0.0]).collect();
        let g = Goal::Cloth(goal.clone());
        assert_eq!(mean_keypoint_distance(&goal, &g).unwrap(), 0.0);
        let shifted: Vec<[f64; 2]> = goal.iter().map(|p| [p[0] + 0.03, p[1]]).collect();
        assert!((mean_keypoint_distance(&shifted, &g).unwrap() - 0.03).abs() < 1e-12);
        let mut one = goal.clone();
        one[4][1] += 0.09;
        assert!((mean_keypoint_distance(&one, &g).unwrap() - 0.01).abs() < 1e-12);
        assert!(mean_keypoint_distance(&goal[..8], &g).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let s = spec();
        let mut rng = RngStream::new(2, "chamfer");
        let t = random_traj(&mut rng);
        let g = rasterize(&t, &s).unwrap();
        assert_eq!(chamfer(&g, &g).unwrap(), 0.0);
        let mut a = OccupancyGrid::zeros(s);
        let mut b = OccupancyGrid::zeros(s);
        a.channel_mut(0)[100 * 256 + 50] = 1.0;
        b.channel_mut(0)[100 * 256 + 60] = 1.0;
        assert!((chamfer(&a, &b).unwrap() - 10.0 * s.cell_size()).abs() < 1e-12);
        assert_eq!(chamfer(&a, &OccupancyGrid::zeros(s)).unwrap(), f64::INFINITY);
        assert!(chamfer(&a, &OccupancyGrid::zeros(GridSpec::new(2))).is_err());
        for _ in 0..50 {
            let x = rasterize(&random_traj(&mut rng), &s).unwrap();
            let y = rasterize(&random_traj(&mut rng), &s).unwrap();
            assert_eq!(chamfer(&x, &y).unwrap(), chamfer(&y, &x).unwrap());
        }
    }

    #[test]
    fn chamfer_paths_agree() {
        // brute-force and transform paths of the directed mean must agree
        let mut rng = RngStream::new(8, "paths");
        let a: Vec<u32> = (0..50).map(|_| rng.index(64 * 64) as u32).collect();
        let b: Vec<u32> = (0..60).map(|_| rng.index(64 * 64) as u32).collect();
        let brute = directed_mean(&a, &b, 64, 64);
        let dt = edt::squared_edt(b.iter().map(|&i| i as usize), 64, 64).unwrap();
        let via_dt = a.iter().map(|&i| dt[i as usize].sqrt()).sum::<f64>() / a.len() as f64;
        assert!((brute - via_dt).abs() < 1e-9);
    }

    #[test]
    fn resample_examples() {
        let t = Trajectory::from_points(&[[0.0, 0.0], [1.0, 0.0]]);
        let r = resample_polyline(&t, 3).unwrap();
        assert_eq!(r, vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]);
        assert_eq!(resample_polyline(&t, 1).unwrap(), vec![[0.0, 0.0]]);
        assert!(resample_polyline(&Trajectory::single(vec![]), 3).is_err());
        // quarter circle sampled densely; resampled chord sum within 1% of arc
        let arc: Vec<[f64; 2]> = (0..=400)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / 400.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let r = resample_points(&arc, 64).unwrap();
        let len: f64 = r.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
        assert!((len - std::f64::consts::FRAC_PI_2).abs() / std::f64::consts::FRAC_PI_2 < 0.01);
    }

    #[test]
    fn sparse_cells_match_dense_raster() {
        let s = spec();
        let mut rng = RngStream::new(5, "sparse");
        for _ in 0..20 {
            let t = random_traj(&mut rng);
            let dense = rasterize(&t, &s).unwrap();
            let cells = trajectory_cells(&t, &s);
            assert_eq!(SparseGrid::from_cells(s, cells.clone()).to_dense(), dense);
            assert_eq!(SparseGrid::from_dense(&dense).to_dense(), dense);
            let g = Goal::Rope([rng.uniform() * 4.0 - 2.0, 0.5]);
            let sparse = SparseGrid::from_cells(s, cells);
            assert_eq!(
                sparse.min_distance(&g, 0.2).unwrap(),
                grid_min_distance(&dense, &g, 0.2).unwrap()
            );
        }
    }

    #[test]
    fn averaging_counts_cells() {
        let s = spec().with_resolution(8);
        let avg = SparseGrid::average_of(s, &[vec![vec![1, 2]], vec![vec![2, 3]], vec![vec![2]]]);
        assert_eq!(avg.channels[0], vec![(1, 1.0 / 3.0), (2, 1.0), (3, 1.0 / 3.0)]);
        assert!(!avg.is_empty_at(0.2));
        assert!(avg.is_empty_at(1.5));
    }

    #[test]
    fn pgm_dump() {
        let dir = tempfile::tempdir().unwrap();
        let g = rasterize(&Trajectory::from_points(&[[0.0, 0.0]]), &spec()).unwrap();
        let paths = write_pgm(&g, dir.path(), "grid").unwrap();
        let bytes = std::fs::read(&paths[0]).unwrap();
        let header = b"P5\n256 256\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 256 * 256);
        assert_eq!(bytes[header.len() + 128 * 256 + 128], 255);
    }
}
