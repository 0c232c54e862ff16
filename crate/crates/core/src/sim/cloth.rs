//! Particle-grid cloth driven by two grippers along a Y-Z cubic spline.
//!
//! The cloth is an `n × n` particle grid with structural and shear springs.
//! Row 0 is the gripped edge; its two corners follow the spline and are
//! released at the spline end. The table is the plane `z = 0`.
//!
//! Spline: knots at `t = 0, dur/2, dur` through the fixed start point,
//! via-point 2 and via-point 3 (fixed end height). The start is clamped (the
//! gripper starts at rest); the end is natural, so the cloth is released with
//! the gripper's final velocity.

use crate::action::{ClothAction, ClothActionBox};
use crate::error::{IrpError, Result};
use crate::params::{ClothParams, WorldMode, WorldVariant};
use crate::rng::RngStream;
use crate::trajectory::{TrackPoint, Trajectory};

use super::{DT, GRAVITY};

/// Gripper start (Y, Z), m.
pub const START: [f64; 2] = [0.0, 1.0];
/// Height of the final via-point, m.
pub const Z_END: f64 = 0.5;
/// Settling stops once every particle is slower than this, m/s.
pub const SETTLE_SPEED: f64 = 0.01;
/// Maximum simulated time after release, s.
pub const SETTLE_CAP: f64 = 3.0;
/// Cloth thickness; final keypoints lie within it of the table.
pub const THICKNESS: f64 = 0.005;

/// Spring stiffness per unit particle mass, 1/s².
const STIFFNESS: f64 = 1.0e5;
const SHEAR_SCALE: f64 = 0.5;
const SPRING_DAMPING_RATIO: f64 = 0.05;
/// Air damping per unit area, kg/(m²·s); acceleration is `-(c/ρ)·u`.
const AIR_DAMPING: f64 = 0.3;
const FRICTION: f64 = 0.3;
const MAX_STRAIN: f64 = 0.09;
const STRAIN_PASSES: usize = 8;
/// Keypoints are recorded every `RECORD_EVERY` steps (25 Hz); cloth
/// datasets would not fit in memory at the rope's 100 Hz.
pub const RECORD_EVERY: usize = 40;

/// The 3×3 keypoint lattice {0, (n−1)/2, n−1}², row-major.
pub fn keypoint_indices(n_grid: usize) -> Result<[usize; 9]> {
    if n_grid < 3 || n_grid % 2 == 0 {
        return Err(IrpError::contract(format!(
            "keypoint lattice needs an odd grid of at least 3, got {n_grid}"
        )));
    }
    let rc = [0, (n_grid - 1) / 2, n_grid - 1];
    let mut out = [0; 9];
    for (i, r) in rc.iter().enumerate() {
        for (j, c) in rc.iter().enumerate() {
            out[3 * i + j] = r * n_grid + c;
        }
    }
    Ok(out)
}

/// One coordinate of the three-knot spline.
#[derive(Debug, Clone, Copy)]
struct SplineAxis {
    y: [f64; 3],
    m: [f64; 3],
}

impl SplineAxis {
    fn new(y: [f64; 3], h: f64) -> Self {
        // Clamped start (zero slope), natural end (zero curvature).
        let a = 6.0 * (y[1] - y[0]) / (h * h);
        let b = 6.0 * (y[0] - 2.0 * y[1] + y[2]) / (h * h);
        let m0 = (4.0 * a - b) / 7.0;
        let m1 = a - 2.0 * m0;
        SplineAxis { y, m: [m0, m1, 0.0] }
    }

    /// Position and velocity at `t`, clamped to the spline range.
    fn eval(&self, t: f64, h: f64) -> (f64, f64) {
        let t = t.clamp(0.0, 2.0 * h);
        let i = if t < h { 0 } else { 1 };
        let (yi, yj, mi, mj) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let a = (i as f64 + 1.0) * h - t;
        let b = t - i as f64 * h;
        let pos = mi * a.powi(3) / (6.0 * h)
            + mj * b.powi(3) / (6.0 * h)
            + (yi / h - mi * h / 6.0) * a
            + (yj / h - mj * h / 6.0) * b;
        let vel = -mi * a * a / (2.0 * h) + mj * b * b / (2.0 * h) - (yi / h - mi * h / 6.0)
            + (yj / h - mj * h / 6.0);
        (pos, vel)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GripperPath {
    y: SplineAxis,
    z: SplineAxis,
    half: f64,
    dur: f64,
}

impl GripperPath {
    pub fn new(action: &ClothAction) -> Self {
        let half = 0.5 * action.dur;
        GripperPath {
            y: SplineAxis::new([START[0], action.p2y, action.p3y], half),
            z: SplineAxis::new([START[1], action.p2z, Z_END], half),
            half,
            dur: action.dur,
        }
    }

    pub fn duration(&self) -> f64 {
        self.dur
    }

    /// Gripper (Y, Z) position and velocity.
    pub fn at(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let (y, vy) = self.y.eval(t, self.half);
        let (z, vz) = self.z.eval(t, self.half);
        if t >= self.dur {
            ([y, z], [0.0, 0.0])
        } else {
            ([y, z], [vy, vz])
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Spring {
    a: usize,
    b: usize,
    rest: f64,
    k: f64,
    c: f64,
    structural: bool,
}

#[derive(Debug, Clone)]
pub struct ClothSim {
    n: usize,
    path: GripperPath,
    pos: Vec<[f64; 3]>,
    vel: Vec<[f64; 3]>,
    particle_mass: f64,
    air: f64,
    drag: f64,
    springs: Vec<Spring>,
    pins: [usize; 2],
    pin_x: [f64; 2],
    released: bool,
    step_index: usize,
    force: Vec<[f64; 3]>,
}

impl ClothSim {
    pub fn new(
        params: &ClothParams,
        action: &ClothAction,
        bx: &ClothActionBox,
        world: &WorldVariant,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        action.validate(bx)?;
        world.validate()?;
        let n = params.n_grid;
        let h = params.size / (n - 1) as f64;
        let particle_mass = params.mass() / (n * n) as f64;
        let mut rng = RngStream::new(seed, "init");
        let mut pos = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let mut p = [
                    -0.5 * params.size + c as f64 * h,
                    START[0],
                    START[1] - r as f64 * h,
                ];
                if world.init_noise_sd > 0.0 && r > 0 {
                    for x in p.iter_mut() {
                        *x += world.init_noise_sd * rng.normal();
                    }
                }
                p[2] = p[2].max(0.0);
                pos.push(p);
            }
        }
        let k = STIFFNESS * particle_mass;
        let c = SPRING_DAMPING_RATIO * 2.0 * (k * particle_mass).sqrt();
        let mut springs = Vec::new();
        let idx = |r: usize, c: usize| r * n + c;
        for r in 0..n {
            for col in 0..n {
                if col + 1 < n {
                    springs.push((idx(r, col), idx(r, col + 1), true));
                }
                if r + 1 < n {
                    springs.push((idx(r, col), idx(r + 1, col), true));
                }
                if r + 1 < n && col + 1 < n {
                    springs.push((idx(r, col), idx(r + 1, col + 1), false));
                    springs.push((idx(r, col + 1), idx(r + 1, col), false));
                }
            }
        }
        let springs = springs
            .into_iter()
            .map(|(a, b, structural)| {
                let scale = if structural { 1.0 } else { SHEAR_SCALE };
                Spring {
                    a,
                    b,
                    rest: if structural { h } else { h * std::f64::consts::SQRT_2 },
                    k: k * scale,
                    c: c * scale,
                    structural,
                }
            })
            .collect();
        let drag = if world.mode == WorldMode::Deployment {
            world.drag_coeff / (n * n) as f64
        } else {
            0.0
        };
        let pins = [0, n - 1];
        Ok(ClothSim {
            n,
            path: GripperPath::new(action),
            pin_x: [pos[pins[0]][0], pos[pins[1]][0]],
            vel: vec![[0.0; 3]; n * n],
            pos,
            particle_mass,
            air: AIR_DAMPING / params.area_density,
            drag,
            springs,
            pins,
            released: false,
            step_index: 0,
            force: vec![[0.0; 3]; n * n],
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * DT
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.pos
    }

    pub fn total_mass(&self) -> f64 {
        self.particle_mass * self.pos.len() as f64
    }

    pub fn released(&self) -> bool {
        self.released
    }

    pub fn max_speed(&self) -> f64 {
        self.vel
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest relative stretch over the structural springs.
    pub fn max_structural_strain(&self) -> f64 {
        self.springs
            .iter()
            .filter(|s| s.structural)
            .map(|s| (dist3(self.pos[s.a], self.pos[s.b]) - s.rest) / s.rest)
            .fold(0.0, f64::max)
    }

    pub fn step(&mut self) -> Result<()> {
        let m = self.particle_mass;
        for f in self.force.iter_mut() {
            *f = [0.0, 0.0, -GRAVITY * m];
        }
        for s in &self.springs {
            let d = sub3(self.pos[s.b], self.pos[s.a]);
            let len = norm3(d).max(1e-12);
            let u = [d[0] / len, d[1] / len, d[2] / len];
            let dv = sub3(self.vel[s.b], self.vel[s.a]);
            // Tension only: cloth buckles instead of resisting compression.
            let mag = s.k * (len - s.rest).max(0.0) + s.c * dot3(dv, u);
            for ax in 0..3 {
                self.force[s.a][ax] += mag * u[ax];
                self.force[s.b][ax] -= mag * u[ax];
            }
        }
        let inv_m = 1.0 / m;
        for (v, f) in self.vel.iter_mut().zip(&self.force) {
            for ax in 0..3 {
                v[ax] += DT * f[ax] * inv_m;
            }
            let k = DT * (self.air + self.drag * norm3(*v) * inv_m);
            for x in v.iter_mut() {
                *x /= 1.0 + k;
            }
        }
        let prev = self.pos.clone();
        for (p, v) in self.pos.iter_mut().zip(&self.vel) {
            for ax in 0..3 {
                p[ax] += DT * v[ax];
            }
        }

        let t_next = (self.step_index + 1) as f64 * DT;
        if !self.released {
            let (g, gv) = self.path.at(t_next);
            for (pin, x) in self.pins.iter().zip(self.pin_x) {
                self.pos[*pin] = [x, g[0], g[1]];
                self.vel[*pin] = [0.0, gv[0], gv[1]];
            }
        }
        self.limit_strain();
        // Strain limiting moved particles; carry that into the velocities.
        for i in 0..self.pos.len() {
            if !self.released && self.pins.contains(&i) {
                continue;
            }
            for ax in 0..3 {
                self.vel[i][ax] = (self.pos[i][ax] - prev[i][ax]) / DT;
            }
        }
        self.table_contact();
        if !self.released && t_next >= self.path.duration() {
            self.released = true;
        }
        self.step_index += 1;
        if self.pos.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(IrpError::Diverged { time: self.time() });
        }
        Ok(())
    }

    fn limit_strain(&mut self) {
        let pinned = |i: usize, released: bool, pins: &[usize; 2]| !released && pins.contains(&i);
        for _ in 0..STRAIN_PASSES {
            let mut clean = true;
            for s in self.springs.iter().filter(|s| s.structural) {
                let d = sub3(self.pos[s.b], self.pos[s.a]);
                let len = norm3(d);
                let max_len = s.rest * (1.0 + MAX_STRAIN);
                if len <= max_len {
                    continue;
                }
                clean = false;
                let (wa, wb) = (
                    if pinned(s.a, self.released, &self.pins) { 0.0 } else { 1.0 },
                    if pinned(s.b, self.released, &self.pins) { 0.0 } else { 1.0 },
                );
                if wa + wb == 0.0 {
                    continue;
                }
                let corr = (len - max_len) / (len * (wa + wb));
                for ax in 0..3 {
                    self.pos[s.a][ax] += wa * corr * d[ax];
                    self.pos[s.b][ax] -= wb * corr * d[ax];
                }
            }
            if clean {
                break;
            }
        }
    }

    fn table_contact(&mut self) {
        for (p, v) in self.pos.iter_mut().zip(self.vel.iter_mut()) {
            if p[2] >= 0.0 {
                continue;
            }
            p[2] = 0.0;
            let vn = v[2].min(0.0);
            v[2] -= vn;
            // Coulomb: tangential impulse bounded by μ times the normal one.
            let vt = v[0].hypot(v[1]);
            if vt > 0.0 {
                let scale = (1.0 - FRICTION * (-vn + GRAVITY * DT) / vt).max(0.0);
                v[0] *= scale;
                v[1] *= scale;
            }
        }
    }

    fn keypoint_sample(&self, kp: &[usize; 9], t: f64) -> Vec<TrackPoint> {
        kp.iter()
            .map(|&i| TrackPoint {
                t,
                y: self.pos[i][1],
                z: self.pos[i][2],
            })
            .collect()
    }

    /// Runs the swing, release and settling phases.
    pub fn run(mut self) -> Result<Trajectory> {
        let kp = keypoint_indices(self.n)?;
        let mut tracks: Vec<Vec<TrackPoint>> = vec![Vec::new(); 9];
        let push = |tracks: &mut Vec<Vec<TrackPoint>>, s: &ClothSim, t: f64| {
            for (tr, p) in tracks.iter_mut().zip(s.keypoint_sample(&kp, t)) {
                tr.push(p);
            }
        };
        push(&mut tracks, &self, 0.0);
        let cap = self.path.duration() + SETTLE_CAP;
        let mut s = 0usize;
        loop {
            self.step()?;
            s += 1;
            let t = s as f64 * DT;
            let settled = self.released && self.max_speed() < SETTLE_SPEED;
            // The final sample may fall off the recording grid.
            if s % RECORD_EVERY == 0 || settled || t >= cap {
                push(&mut tracks, &self, t);
            }
            if settled || t >= cap {
                break;
            }
        }
        let final_keypoints = kp.iter().map(|&i| [self.pos[i][1], self.pos[i][2]]).collect();
        Ok(Trajectory {
            tracks,
            final_keypoints: Some(final_keypoints),
        })
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3(sub3(a, b))
}

/// Executes one placement swing; returns the 9 keypoint tracks and the
/// settled keypoints.
pub fn execute_swing(
    params: &ClothParams,
    action: &ClothAction,
    bx: &ClothActionBox,
    world: &WorldVariant,
    seed: u64,
) -> Result<Trajectory> {
    ClothSim::new(params, action, bx, world, seed)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoint_lattice() {
        assert_eq!(keypoint_indices(3).unwrap(), [0, 1, 2, 3, 4, 5, 6, 7, 8]);
        let k = keypoint_indices(13).unwrap();
        let rc: Vec<(usize, usize)> = k.iter().map(|i| (i / 13, i % 13)).collect();
        for (r, c) in rc {
            assert!([0, 6, 12].contains(&r) && [0, 6, 12].contains(&c));
        }
        assert_eq!(keypoint_indices(9).unwrap()[4], 4 * 9 + 4);
        assert!(keypoint_indices(8).is_err());
    }

    #[test]
    fn spline_hits_knots_and_starts_at_rest() {
        let a = ClothAction {
            p2y: 0.4,
            p2z: 1.3,
            p3y: 0.8,
            dur: 1.0,
        };
        let p = GripperPath::new(&a);
        let (s, v) = p.at(0.0);
        assert!((s[0] - START[0]).abs() < 1e-12 && (s[1] - START[1]).abs() < 1e-12);
        assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
        let (m, _) = p.at(0.5);
        assert!((m[0] - 0.4).abs() < 1e-12 && (m[1] - 1.3).abs() < 1e-12);
        let (e, _) = p.at(1.0);
        assert!((e[0] - 0.8).abs() < 1e-12 && (e[1] - Z_END).abs() < 1e-12);
        // velocity matches a finite difference of the position
        let (p0, _) = p.at(0.3);
        let (p1, _) = p.at(0.3 + 1e-6);
        let (_, vm) = p.at(0.3 + 5e-7);
        assert!(((p1[0] - p0[0]) / 1e-6 - vm[0]).abs() < 1e-4);
    }
}
