//! Planar whipping simulator.
//!
//! A base-fixed two-link arm (upper arm 0.425 m, second link
//! `WorldVariant::embodiment_link`) moves from the home pose to the commanded
//! joint targets along a synchronized trapezoidal profile. The rope is a
//! chain of point masses on rigid links pinned to the tip of the second link.
//!
//! Joint convention: the upper arm points at angle `j2` from +Y towards +Z and
//! the second link at absolute angle `j3 + 290°`, so no point of the arm turns
//! faster than the speed cap. At home (90°, −110°) the upper arm is vertical
//! and the second link points straight back (−Y); every in-box target swings
//! the link clockwise, over the top towards the front.

use crate::action::RopeAction;
use crate::error::{IrpError, Result};
use crate::params::{RopeParams, WorldVariant};
use crate::rng::RngStream;
use crate::trajectory::{TrackPoint, Trajectory};

use super::{v2_dot, v2_norm, v2_sub, DT, GRAVITY, RECORD_EVERY};

pub const UPPER_ARM: f64 = 0.425;
pub const HOME_J2: f64 = 90.0;
pub const HOME_J3: f64 = -110.0;
const LINK2_OFFSET_DEG: f64 = 290.0;
/// Joint acceleration of the trapezoidal profile, rad/s².
pub const JOINT_ACCEL: f64 = 20.0;
/// Episode length, s.
pub const HORIZON: f64 = 4.0;

const CONSTRAINT_ITERS: usize = 1;
const CONSTRAINT_TOL: f64 = 1e-6;
const FLOOR_FRICTION: f64 = 0.3;
const DAMPING_SWEEPS: usize = 1;

/// Start configuration of every episode, degrees.
pub fn home_pose() -> (f64, f64) {
    (HOME_J2, HOME_J3)
}

/// Synchronized trapezoidal joint motion from home to the targets.
#[derive(Debug, Clone, Copy)]
pub struct JointProfile {
    q0: [f64; 2],
    dq: [f64; 2],
    /// Displacement of the leading joint, rad.
    lead: f64,
    accel: f64,
    vmax: f64,
    t_acc: f64,
    t_cruise: f64,
}

impl JointProfile {
    pub fn new(action: &RopeAction) -> Self {
        let q0 = [HOME_J2.to_radians(), HOME_J3.to_radians()];
        let dq = [action.j2_rad() - q0[0], action.j3_rad() - q0[1]];
        let lead = dq[0].abs().max(dq[1].abs());
        let accel = JOINT_ACCEL;
        let (vmax, t_acc, t_cruise) = if lead <= action.v * action.v / accel {
            let t = (lead / accel).sqrt();
            (accel * t, t, 0.0)
        } else {
            let t = action.v / accel;
            (action.v, t, (lead - action.v * t) / action.v)
        };
        JointProfile {
            q0,
            dq,
            lead,
            accel,
            vmax,
            t_acc,
            t_cruise,
        }
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.t_acc + self.t_cruise
    }

    /// Leading-joint distance travelled and speed at time `t`.
    fn lead_state(&self, t: f64) -> (f64, f64) {
        let (a, ta, tc) = (self.accel, self.t_acc, self.t_cruise);
        if t <= 0.0 {
            (0.0, 0.0)
        } else if t < ta {
            (0.5 * a * t * t, a * t)
        } else if t < ta + tc {
            (0.5 * a * ta * ta + self.vmax * (t - ta), self.vmax)
        } else if t < 2.0 * ta + tc {
            let r = 2.0 * ta + tc - t;
            (self.lead - 0.5 * a * r * r, a * r)
        } else {
            (self.lead, 0.0)
        }
    }

    /// Joint angles and rates (rad, rad/s) at time `t`.
    pub fn joints(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        if self.lead == 0.0 {
            return (self.q0, [0.0, 0.0]);
        }
        let (p, s) = self.lead_state(t);
        let f = p / self.lead;
        let r = s / self.lead;
        (
            [self.q0[0] + f * self.dq[0], self.q0[1] + f * self.dq[1]],
            [r * self.dq[0], r * self.dq[1]],
        )
    }
}

/// Forward kinematics of the arm; returns (elbow, link-2 tip).
pub fn arm_points(q: [f64; 2], link2: f64) -> ([f64; 2], [f64; 2]) {
    let a1 = q[0];
    let a2 = q[1] + LINK2_OFFSET_DEG.to_radians();
    let elbow = [UPPER_ARM * a1.cos(), UPPER_ARM * a1.sin()];
    (elbow, [elbow[0] + link2 * a2.cos(), elbow[1] + link2 * a2.sin()])
}

/// Stepping state of one whip execution. Node 0 is the pinned root.
#[derive(Debug, Clone)]
pub struct RopeSim {
    profile: JointProfile,
    link2: f64,
    world: WorldVariant,
    rest: Vec<f64>,
    inv_rest2: Vec<f64>,
    pos: Vec<[f64; 2]>,
    prev: Vec<[f64; 2]>,
    vel: Vec<[f64; 2]>,
    inv_mass: Vec<f64>,
    mass: Vec<f64>,
    drag: Vec<f64>,
    damping: f64,
    step_index: usize,
    // Scratch for the tridiagonal solve.
    dir: Vec<[f64; 2]>,
    lambda: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
    rhs: Vec<f64>,
}

impl RopeSim {
    pub fn new(
        params: &RopeParams,
        action: &RopeAction,
        world: &WorldVariant,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        action.validate()?;
        world.validate()?;
        let n = params.n_links;
        let rest = params.link_lengths();
        let node_mass = params.mass() / n as f64;
        let mut mass = vec![0.0; n + 1];
        for (i, m) in mass.iter_mut().enumerate().skip(1) {
            *m = node_mass + params.lumped_masses.as_ref().map_or(0.0, |l| l[i - 1]);
        }
        let inv_mass: Vec<f64> = mass
            .iter()
            .enumerate()
            .map(|(i, m)| if i == 0 { 0.0 } else { 1.0 / m })
            .collect();
        let total = params.total_length();
        let mut drag = vec![0.0; n + 1];
        for i in 1..=n {
            drag[i] = world.drag_coeff * rest[i - 1] / total;
        }

        let damping = params.joint_damping;

        let profile = JointProfile::new(action);
        let (q, _) = profile.joints(0.0);
        let (_, root) = arm_points(q, world.embodiment_link);
        let mut rng = RngStream::new(seed, "init");
        let mut pos = Vec::with_capacity(n + 1);
        pos.push(root);
        let mut p = root;
        for len in &rest {
            let ang = -std::f64::consts::FRAC_PI_2
                + if world.init_noise_sd > 0.0 {
                    world.init_noise_sd * rng.normal()
                } else {
                    0.0
                };
            p = [p[0] + len * ang.cos(), p[1] + len * ang.sin()];
            pos.push(p);
        }
        let mut sim = RopeSim {
            profile,
            link2: world.embodiment_link,
            world: *world,
            inv_rest2: rest.iter().map(|l| 1.0 / (l * l)).collect(),
            rest,
            vel: vec![[0.0; 2]; n + 1],
            prev: pos.clone(),
            pos,
            inv_mass,
            mass,
            drag,
            damping,
            step_index: 0,
            dir: vec![[0.0; 2]; n],
            lambda: vec![0.0; n],
            diag: vec![0.0; n],
            off: vec![0.0; n],
            rhs: vec![0.0; n],
        };
        if sim.world.has_floor() {
            sim.apply_floor();
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * DT
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.pos
    }

    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.vel
    }

    pub fn tip(&self) -> [f64; 2] {
        *self.pos.last().unwrap()
    }

    pub fn arm_motion_end(&self) -> f64 {
        self.profile.duration()
    }

    /// Kinetic plus gravitational energy of the free nodes, J.
    pub fn energy(&self) -> f64 {
        self.pos
            .iter()
            .zip(&self.vel)
            .zip(&self.mass)
            .skip(1)
            .map(|((p, v), m)| 0.5 * m * v2_dot(*v, *v) + m * GRAVITY * p[1])
            .sum()
    }

    /// Largest relative deviation of any link from its rest length.
    pub fn max_link_strain(&self) -> f64 {
        self.rest
            .iter()
            .enumerate()
            .map(|(k, l)| (v2_norm(v2_sub(self.pos[k + 1], self.pos[k])) - l).abs() / l)
            .fold(0.0, f64::max)
    }

    pub fn step(&mut self) -> Result<()> {
        let n = self.rest.len();
        let t_next = (self.step_index + 1) as f64 * DT;
        let (q, _) = self.profile.joints(t_next);
        let (_, root) = arm_points(q, self.link2);

        self.prev.copy_from_slice(&self.pos);
        self.pos[0] = root;
        for i in 1..=n {
            let v = &mut self.vel[i];
            v[1] -= GRAVITY * DT;
            if self.drag[i] > 0.0 {
                // -c|u|u, integrated implicitly in the speed.
                let k = self.drag[i] * v2_norm(*v) * DT * self.inv_mass[i];
                v[0] /= 1.0 + k;
                v[1] /= 1.0 + k;
            }
            self.pos[i][0] += DT * v[0];
            self.pos[i][1] += DT * v[1];
        }
        if self.world.has_floor() {
            self.apply_floor();
        }
        self.project_constraints();
        for i in 1..=n {
            self.vel[i] = [
                (self.pos[i][0] - self.prev[i][0]) / DT,
                (self.pos[i][1] - self.prev[i][1]) / DT,
            ];
        }
        self.vel[0] = [(root[0] - self.prev[0][0]) / DT, (root[1] - self.prev[0][1]) / DT];
        if self.world.has_floor() {
            self.floor_velocity();
        }
        if self.damping > 0.0 {
            self.apply_joint_damping();
        }
        self.step_index += 1;
        let tip = self.tip();
        if !(tip[0].is_finite() && tip[1].is_finite()) {
            return Err(IrpError::Diverged { time: self.time() });
        }
        Ok(())
    }

    /// Newton iterations on the chain's distance constraints. The system
    /// matrix J·W·Jᵀ of a chain is tridiagonal, so each iteration is a direct
    /// Thomas solve.
    fn project_constraints(&mut self) {
        let n = self.rest.len();
        for _ in 0..CONSTRAINT_ITERS {
            let mut worst = 0.0f64;
            for k in 0..n {
                let d = v2_sub(self.pos[k + 1], self.pos[k]);
                let len = v2_norm(d).max(1e-12);
                self.dir[k] = [d[0] / len, d[1] / len];
                let c = len - self.rest[k];
                worst = worst.max(c.abs() / self.rest[k]);
                self.rhs[k] = -c;
            }
            if worst < CONSTRAINT_TOL {
                break;
            }
            let w = &self.inv_mass;
            for k in 0..n {
                self.diag[k] = w[k] + w[k + 1];
                // Coupling between constraint k and k+1 through node k+1.
                self.off[k] = if k + 1 < n {
                    -w[k + 1] * v2_dot(self.dir[k], self.dir[k + 1])
                } else {
                    0.0
                };
            }
            // Thomas algorithm on the symmetric tridiagonal system.
            let (diag, off, rhs) = (&mut self.diag, &self.off, &mut self.rhs);
            for k in 1..n {
                let m = off[k - 1] / diag[k - 1];
                diag[k] -= m * off[k - 1];
                rhs[k] -= m * rhs[k - 1];
            }
            self.lambda[n - 1] = rhs[n - 1] / diag[n - 1];
            for k in (0..n - 1).rev() {
                self.lambda[k] = (rhs[k] - off[k] * self.lambda[k + 1]) / diag[k];
            }
            for i in 1..=n {
                let wi = self.inv_mass[i];
                let lk = self.lambda[i - 1];
                let mut dx = [wi * lk * self.dir[i - 1][0], wi * lk * self.dir[i - 1][1]];
                if i < n {
                    let ln = self.lambda[i];
                    dx[0] -= wi * ln * self.dir[i][0];
                    dx[1] -= wi * ln * self.dir[i][1];
                }
                self.pos[i][0] += dx[0];
                self.pos[i][1] += dx[1];
            }
        }
    }

    fn apply_floor(&mut self) {
        let fz = self.world.floor_z;
        for p in self.pos.iter_mut().skip(1) {
            if p[1] < fz {
                p[1] = fz;
            }
        }
    }

    fn floor_velocity(&mut self) {
        let fz = self.world.floor_z + 1e-6;
        for (p, v) in self.pos.iter().zip(self.vel.iter_mut()).skip(1) {
            if p[1] <= fz {
                if v[1] < 0.0 {
                    v[1] = 0.0;
                }
                v[0] *= 1.0 - FLOOR_FRICTION;
            }
        }
    }

    // Links are held at rest length to ~1e-6 by the projection, so the
    // damping terms use the rest length in place of the current one.
    fn link_omega(&self, k: usize) -> f64 {
        let d = v2_sub(self.pos[k + 1], self.pos[k]);
        let dv = v2_sub(self.vel[k + 1], self.vel[k]);
        (d[0] * dv[1] - d[1] * dv[0]) * self.inv_rest2[k]
    }

    /// Adds a torque impulse `p` to link `k` as a force couple at its ends.
    fn couple(&mut self, k: usize, p: f64) {
        let d = v2_sub(self.pos[k + 1], self.pos[k]);
        let s = p * self.inv_rest2[k];
        let f = [-d[1] * s, d[0] * s];
        let (wa, wb) = (self.inv_mass[k], self.inv_mass[k + 1]);
        self.vel[k + 1][0] += wb * f[0];
        self.vel[k + 1][1] += wb * f[1];
        self.vel[k][0] -= wa * f[0];
        self.vel[k][1] -= wa * f[1];
    }

    /// Implicit damping of the relative rotation at each inter-link joint:
    /// `Δω ← Δω / (1 + c·dt/I)`, with `1/I` the response of `Δω` to a unit
    /// torque impulse pair on the two links. Gauss-Seidel sweeps over joints.
    fn apply_joint_damping(&mut self) {
        let n = self.rest.len();
        for _ in 0..DAMPING_SWEEPS {
            for j in 1..n {
                let rel = self.link_omega(j) - self.link_omega(j - 1);
                if rel == 0.0 {
                    continue;
                }
                let da = v2_sub(self.pos[j], self.pos[j - 1]);
                let db = v2_sub(self.pos[j + 1], self.pos[j]);
                let (ia, ib) = (self.inv_rest2[j - 1], self.inv_rest2[j]);
                let w = &self.inv_mass;
                let inv_inertia = (w[j] + w[j + 1]) * ib
                    + (w[j - 1] + w[j]) * ia
                    + 2.0 * w[j] * v2_dot(da, db) * ia * ib;
                if inv_inertia <= 0.0 {
                    continue;
                }
                let k = self.damping * DT * inv_inertia;
                let p = rel * k / (1.0 + k) / inv_inertia;
                self.couple(j, -p);
                self.couple(j - 1, p);
            }
        }
    }

    /// Runs to the horizon and returns the tip track at 100 Hz.
    pub fn run(mut self) -> Result<Trajectory> {
        let steps = (HORIZON / DT).round() as usize;
        let mut track = Vec::with_capacity(steps / RECORD_EVERY + 1);
        let tip = self.tip();
        track.push(TrackPoint {
            t: 0.0,
            y: tip[0],
            z: tip[1],
        });
        for s in 1..=steps {
            self.step()?;
            if s % RECORD_EVERY == 0 {
                let tip = self.tip();
                track.push(TrackPoint {
                    t: s as f64 * DT,
                    y: tip[0],
                    z: tip[1],
                });
            }
        }
        Ok(Trajectory::single(track))
    }
}

/// Executes one whip and returns the rope-tip trajectory.
pub fn execute_whip(
    params: &RopeParams,
    action: &RopeAction,
    world: &WorldVariant,
    seed: u64,
) -> Result<Trajectory> {
    RopeSim::new(params, action, world, seed)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RopeParams {
        RopeParams::new(1.0, 0.03)
    }

    #[test]
    fn home_is_a_box_corner() {
        let (j2, j3) = home_pose();
        assert_eq!((j2, j3), (90.0, -110.0));
        assert!(RopeAction::new(1.0, j2, j3).is_ok());
    }

    #[test]
    fn profile_respects_speed_cap_and_ends_at_target() {
        let a = RopeAction::new(2.0, -30.0, -290.0).unwrap();
        let p = JointProfile::new(&a);
        let mut t = 0.0;
        while t < p.duration() + 0.1 {
            let (_, qd) = p.joints(t);
            assert!(qd[0].abs() <= 2.0 + 1e-9 && qd[1].abs() <= 2.0 + 1e-9);
            t += 0.01;
        }
        let (q, qd) = p.joints(p.duration() + 0.01);
        assert!((q[0] - a.j2_rad()).abs() < 1e-9);
        assert!((q[1] - a.j3_rad()).abs() < 1e-9);
        assert_eq!(qd, [0.0, 0.0]);
    }

    #[test]
    fn no_motion_stays_at_equilibrium() {
        let (j2, j3) = home_pose();
        let a = RopeAction::new(1.0, j2, j3).unwrap();
        let params = base();
        let traj = execute_whip(&params, &a, &WorldVariant::training(), 1).unwrap();
        let (_, root) = arm_points([j2.to_radians(), j3.to_radians()], 0.5);
        let eq = [root[0], root[1] - params.length];
        for p in traj.tracks[0].iter().filter(|p| p.t >= 1.0) {
            assert!((p.y - eq[0]).hypot(p.z - eq[1]) < 0.01);
        }
    }

    #[test]
    fn bit_identical_replay() {
        let a = RopeAction::new(2.5, 10.0, -250.0).unwrap();
        let w = WorldVariant::deployment();
        let t1 = execute_whip(&base(), &a, &w, 9).unwrap();
        let t2 = execute_whip(&base(), &a, &w, 9).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.tracks[0].len(), 401);
    }

    #[test]
    fn links_stay_rigid() {
        let a = RopeAction::new(3.14, -30.0, -290.0).unwrap();
        let mut sim = RopeSim::new(&base(), &a, &WorldVariant::training(), 0).unwrap();
        for s in 1..=4000 {
            sim.step().unwrap();
            if s % RECORD_EVERY == 0 {
                assert!(sim.max_link_strain() < 1e-3, "strain at step {s}");
            }
        }
    }
}
