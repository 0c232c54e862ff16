//! Observed trajectories and goals.

use serde::{Deserialize, Serialize};

use crate::action::Task;
use crate::error::{IrpError, Result};

/// Half-width of the observation window every goal must lie in, meters.
pub const WINDOW_HALF_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub y: f64,
    pub z: f64,
}

impl TrackPoint {
    pub fn yz(&self) -> [f64; 2] {
        [self.y, self.z]
    }
}

/// One point sequence per keypoint, sharing a sample clock. Cloth
/// trajectories also carry the settled keypoint positions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub tracks: Vec<Vec<TrackPoint>>,
    pub final_keypoints: Option<Vec<[f64; 2]>>,
}

impl Trajectory {
    pub fn single(track: Vec<TrackPoint>) -> Self {
        Trajectory {
            tracks: vec![track],
            final_keypoints: None,
        }
    }

    /// Builds a one-track trajectory from planar points with a 10 ms clock.
    pub fn from_points(points: &[[f64; 2]]) -> Self {
        Self::single(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| TrackPoint {
                    t: i as f64 * 0.01,
                    y: p[0],
                    z: p[1],
                })
                .collect(),
        )
    }

    pub fn n_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tracks
            .iter()
            .flatten()
            .all(|p| p.t.is_finite() && p.y.is_finite() && p.z.is_finite())
            && self
                .final_keypoints
                .iter()
                .flatten()
                .all(|k| k[0].is_finite() && k[1].is_finite())
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if self.tracks.len() != task.n_tracks() {
            return Err(IrpError::contract(format!(
                "{task} trajectory needs {} tracks, got {}",
                task.n_tracks(),
                self.tracks.len()
            )));
        }
        let clock: Vec<f64> = self.tracks[0].iter().map(|p| p.t).collect();
        if clock.windows(2).any(|w| w[1] <= w[0]) {
            return Err(IrpError::contract("track time stamps must strictly increase"));
        }
        for tr in &self.tracks[1..] {
            if tr.len() != clock.len() || tr.iter().zip(&clock).any(|(p, &t)| p.t != t) {
                return Err(IrpError::contract("tracks must share one sample clock"));
            }
        }
        match (task, &self.final_keypoints) {
            (Task::Rope, None) => Ok(()),
            (Task::Cloth, Some(k)) if k.len() == 9 => Ok(()),
            _ => Err(IrpError::contract(format!(
                "{task} trajectory has wrong final keypoint data"
            ))),
        }
    }

    /// Planar points of one track.
    pub fn points(&self, track: usize) -> Vec<[f64; 2]> {
        self.tracks[track].iter().map(TrackPoint::yz).collect()
    }
}

/// Task goal, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Goal {
    /// Point the rope tip must pass through.
    Rope([f64; 2]),
    /// Target positions of the 9 cloth keypoints, index-matched.
    Cloth(Vec<[f64; 2]>),
}

impl Goal {
    pub fn task(&self) -> Task {
        match self {
            Goal::Rope(_) => Task::Rope,
            Goal::Cloth(_) => Task::Cloth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pts: &[[f64; 2]] = match self {
            Goal::Rope(p) => std::slice::from_ref(p),
            Goal::Cloth(k) => {
                if k.len() != 9 {
                    return Err(IrpError::contract("cloth goal needs 9 keypoints"));
                }
                k
            }
        };
        for p in pts {
            if !(p[0].abs() <= WINDOW_HALF_WIDTH && p[1].abs() <= WINDOW_HALF_WIDTH) {
                return Err(IrpError::contract(format!(
                    "goal ({}, {}) outside the observation window",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }

    pub fn rope_point(&self) -> Result<[f64; 2]> {
        match self {
            Goal::Rope(p) => Ok(*p),
            Goal::Cloth(_) => Err(IrpError::contract("expected a rope goal")),
        }
    }

    pub fn cloth_keypoints(&self) -> Result<&[[f64; 2]]> {
        match self {
            Goal::Cloth(k) => Ok(k),
            Goal::Rope(_) => Err(IrpError::contract("expected a cloth goal")),
        }
    }

    /// Distance between two goals of the same task (mean keypoint distance
    /// for cloth).
    pub fn distance_to(&self, other: &Goal) -> f64 {
        match (self, other) {
            (Goal::Rope(a), Goal::Rope(b)) => (a[0] - b[0]).hypot(a[1] - b[1]),
            (Goal::Cloth(a), Goal::Cloth(b)) => {
                a.iter()
                    .zip(b)
                    .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
                    .sum::<f64>()
                    / a.len().max(1) as f64
            }
            _ => f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_must_increase() {
        let mut t = Trajectory::from_points(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(t.validate(Task::Rope).is_ok());
        t.tracks[0][1].t = 0.0;
        assert!(t.validate(Task::Rope).is_err());
    }

    #[test]
    fn goal_window() {
        assert!(Goal::Rope([2.9, -2.9]).validate().is_ok());
        assert!(Goal::Rope([3.1, 0.0]).validate().is_err());
        assert!(Goal::Cloth(vec![[0.0, 0.0]; 8]).validate().is_err());
    }
}
