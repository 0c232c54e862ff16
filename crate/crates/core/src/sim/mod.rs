//! Deformable-object simulators and the plant abstraction the controllers
//! execute actions on.

pub mod cloth;
pub mod plant;
pub mod rope;

pub use cloth::{execute_swing, keypoint_indices, ClothSim};
pub use plant::{ClothPlant, Plant, RopePlant, SwapPlant};
pub use rope::{execute_whip, home_pose, RopeSim};

pub const GRAVITY: f64 = 9.81;

/// Integration step, s.
pub const DT: f64 = 1e-3;

/// Samples are recorded every `RECORD_EVERY` steps (100 Hz).
pub const RECORD_EVERY: usize = 10;

#[inline]
pub(crate) fn v2_sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn v2_dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn v2_norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}
