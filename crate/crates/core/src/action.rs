//! Action primitives, their normalized form, and delta application.
//!
//! Every controller in the crate works in normalized coordinates, where each
//! action dimension is mapped affinely onto `[0, 1]`. Physical units only
//! appear at the simulator boundary.

use serde::{Deserialize, Serialize};

use crate::error::{IrpError, Result};

/// Which manipulation task an action, trajectory or dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rope,
    Cloth,
}

impl Task {
    /// Action dimensionality `N_a`.
    pub fn action_dim(self) -> usize {
        match self {
            Task::Rope => 3,
            Task::Cloth => 4,
        }
    }

    /// Number of tracked keypoints, which is also the grid channel count.
    pub fn n_tracks(self) -> usize {
        match self {
            Task::Rope => 1,
            Task::Cloth => 9,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Task::Rope => 0,
            Task::Cloth => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Task::Rope),
            1 => Ok(Task::Cloth),
            other => Err(IrpError::format(format!("unknown task id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Rope => "rope",
            Task::Cloth => "cloth",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = IrpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rope" => Ok(Task::Rope),
            "cloth" => Ok(Task::Cloth),
            other => Err(IrpError::format(format!("unknown task '{other}'"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed interval for one action dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    fn check(&self, field: &'static str, value: f64) -> Result<()> {
        if value.is_finite() && value >= self.lo && value <= self.hi {
            Ok(())
        } else {
            Err(IrpError::Range {
                field,
                value,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    pub fn to_unit(&self, value: f64) -> f64 {
        (value - self.lo) / (self.hi - self.lo)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

fn check_unit(field: &'static str, u: f64) -> Result<()> {
    Bound::new(0.0, 1.0).check(field, u)
}

/// Whipping primitive: joint speed cap plus two joint targets (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeAction {
    /// Maximum joint angular speed, rad/s.
    pub v: f64,
    /// Joint-2 target, degrees.
    pub j2: f64,
    /// Joint-3 target, degrees.
    pub j3: f64,
}

impl RopeAction {
    pub const V: Bound = Bound::new(1.0, 3.14);
    pub const J2: Bound = Bound::new(-30.0, 90.0);
    pub const J3: Bound = Bound::new(-290.0, -110.0);
    pub const FIELDS: [&'static str; 3] = ["v", "j2", "j3"];

    pub fn new(v: f64, j2: f64, j3: f64) -> Result<Self> {
        let a = RopeAction { v, j2, j3 };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        Self::V.check("v", self.v)?;
        Self::J2.check("j2", self.j2)?;
        Self::J3.check("j3", self.j3)
    }

    pub fn normalize(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(vec![
            Self::V.to_unit(self.v),
            Self::J2.to_unit(self.j2),
            Self::J3.to_unit(self.j3),
        ])
    }

    pub fn denormalize(u: &[f64]) -> Result<Self> {
        if u.len() != 3 {
            return Err(IrpError::contract(format!(
                "rope action needs 3 components, got {}",
                u.len()
            )));
        }
        for (field, &x) in Self::FIELDS.iter().zip(u) {
            check_unit(field, x)?;
        }
        Ok(RopeAction {
            v: Self::V.from_unit(u[0]),
            j2: Self::J2.from_unit(u[1]),
            j3: Self::J3.from_unit(u[2]),
        })
    }

    pub fn j2_rad(&self) -> f64 {
        self.j2.to_radians()
    }

    pub fn j3_rad(&self) -> f64 {
        self.j3.to_radians()
    }
}

/// Box for the cloth spline action. The ranges are a choice, so they are
/// configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClothActionBox {
    pub p2y: Bound,
    pub p2z: Bound,
    pub p3y: Bound,
    pub dur: Bound,
}

impl Default for ClothActionBox {
    fn default() -> Self {
        ClothActionBox {
            p2y: Bound::new(0.0, 0.8),
            p2z: Bound::new(0.6, 1.6),
            p3y: Bound::new(0.0, 1.0),
            dur: Bound::new(0.5, 2.0),
        }
    }
}

impl ClothActionBox {
    fn bounds(&self) -> [(&'static str, Bound); 4] {
        [
            ("p2y", self.p2y),
            ("p2z", self.p2z),
            ("p3y", self.p3y),
            ("dur", self.dur),
        ]
    }
}

/// Two-gripper spline primitive: via-point 2 (Y, Z), via-point 3 Y and total
/// duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClothAction {
    pub p2y: f64,
    pub p2z: f64,
    pub p3y: f64,
    pub dur: f64,
}

impl ClothAction {
    pub fn validate(&self, bx: &ClothActionBox) -> Result<()> {
        for ((field, b), x) in bx.bounds().into_iter().zip(self.as_array()) {
            b.check(field, x)?;
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p2y, self.p2z, self.p3y, self.dur]
    }

    pub fn normalize(&self, bx: &ClothActionBox) -> Result<Vec<f64>> {
        self.validate(bx)?;
        Ok(bx
            .bounds()
            .into_iter()
            .zip(self.as_array())
            .map(|((_, b), x)| b.to_unit(x))
            .collect())
    }

    pub fn denormalize(u: &[f64], bx: &ClothActionBox) -> Result<Self> {
        if u.len() != 4 {
            return Err(IrpError::contract(format!(
                "cloth action needs 4 components, got {}",
                u.len()
            )));
        }
        let b = bx.bounds();
        for ((field, _), &x) in b.iter().zip(u) {
            check_unit(field, x)?;
        }
        Ok(ClothAction {
            p2y: b[0].1.from_unit(u[0]),
            p2z: b[1].1.from_unit(u[1]),
            p3y: b[2].1.from_unit(u[2]),
            dur: b[3].1.from_unit(u[3]),
        })
    }
}

/// Perturbation of a normalized action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAction(pub Vec<f64>);

impl DeltaAction {
    pub fn zeros(dim: usize) -> Self {
        DeltaAction(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `clip(a + delta, 0, 1)` componentwise.
pub fn apply_delta(a_norm: &[f64], delta: &DeltaAction) -> Result<Vec<f64>> {
    if a_norm.len() != delta.dim() {
        return Err(IrpError::contract(format!(
            "delta has dimension {}, action has {}",
            delta.dim(),
            a_norm.len()
        )));
    }
    Ok(a_norm
        .iter()
        .zip(&delta.0)
        .map(|(a, d)| (a + d).clamp(0.0, 1.0))
        .collect())
}

/// Checks that a normalized action lies in the unit box.
pub fn check_unit_box(a_norm: &[f64], task: Task) -> Result<()> {
    if a_norm.len() != task.action_dim() {
        return Err(IrpError::contract(format!(
            "{task} action needs {} components, got {}",
            task.action_dim(),
            a_norm.len()
        )));
    }
    for &x in a_norm {
        check_unit("action", x)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn rope_box_corners_and_midpoint() {
        let lo = RopeAction::new(1.0, -30.0, -290.0).unwrap();
        assert!(close(&lo.normalize().unwrap(), &[0.0, 0.0, 0.0]));
        let hi = RopeAction::new(3.14, 90.0, -110.0).unwrap();
        assert!(close(&hi.normalize().unwrap(), &[1.0, 1.0, 1.0]));
        let mid = RopeAction::new(2.07, 30.0, -200.0).unwrap();
        assert!(close(&mid.normalize().unwrap(), &[0.5, 0.5, 0.5]));
    }

    #[test]
    fn out_of_box_names_field() {
        let err = RopeAction::new(2.0, 95.0, -200.0).unwrap_err();
        match err {
            IrpError::Range { field, .. } => assert_eq!(field, "j2"),
            e => panic!("unexpected {e}"),
        }
        let bx = ClothActionBox::default();
        let c = ClothAction {
            p2y: 0.1,
            p2z: 1.0,
            p3y: 0.2,
            dur: 9.0,
        };
        assert!(matches!(
            c.normalize(&bx),
            Err(IrpError::Range { field: "dur", .. })
        ));
    }

    #[test]
    fn delta_examples() {
        let z = apply_delta(&[0.5, 0.5, 0.5], &DeltaAction::zeros(3)).unwrap();
        assert_eq!(z, vec![0.5, 0.5, 0.5]);
        let c = apply_delta(&[0.9, 0.5, 0.5], &DeltaAction(vec![0.3, 0.0, 0.0])).unwrap();
        assert_eq!(c, vec![1.0, 0.5, 0.5]);
        let s = apply_delta(&[0.2, 0.2, 0.2], &DeltaAction(vec![0.1, -0.1, 0.05])).unwrap();
        assert!(close(&s, &[0.3, 0.1, 0.25]));
        assert!(apply_delta(&[0.2, 0.2], &DeltaAction::zeros(3)).is_err());
    }

    proptest! {
        #[test]
        fn rope_round_trip(v in 1.0f64..=3.14, j2 in -30.0f64..=90.0, j3 in -290.0f64..=-110.0) {
            let a = RopeAction::new(v, j2, j3).unwrap();
            let back = RopeAction::denormalize(&a.normalize().unwrap()).unwrap();
            prop_assert!((back.v - v).abs() <= 1e-12 * v.abs().max(1.0));
            prop_assert!((back.j2 - j2).abs() <= 1e-12 * j2.abs().max(1.0));
            prop_assert!((back.j3 - j3).abs() <= 1e-12 * j3.abs().max(1.0));
        }

        #[test]
        fn cloth_round_trip(u in proptest::collection::vec(0.0f64..=1.0, 4)) {
            let bx = ClothActionBox::default();
            let a = ClothAction::denormalize(&u, &bx).unwrap();
            let back = a.normalize(&bx).unwrap();
            prop_assert!(close(&back, &u));
        }

        #[test]
        fn delta_stays_in_box(
            a in proptest::collection::vec(0.0f64..=1.0, 3),
            d in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let delta = DeltaAction(d.clone());
            let out = apply_delta(&a, &delta).unwrap();
            for (i, x) in out.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(x));
                // monotone in the delta component before clipping
                let bigger = DeltaAction(d.iter().enumerate().map(|(j, v)| if i == j { v + 0.1 } else { *v }).collect());
                prop_assert!(apply_delta(&a, &bigger).unwrap()[i] >= *x);
            }
        }
    }
}
