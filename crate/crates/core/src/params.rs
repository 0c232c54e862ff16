//! Object and world parameters shared by both simulators.

use serde::{Deserialize, Serialize};

use crate::error::{IrpError, Result};

/// Rope discretization and material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeParams {
    /// Rest length, m.
    pub length: f64,
    /// Linear density, kg/m.
    pub lin_density: f64,
    pub n_links: usize,
    /// Damping of relative rotation between neighbouring links, N·m·s/rad.
    pub joint_damping: f64,
    /// Per-link rest lengths, replacing the uniform split of `length`.
    pub link_length_override: Option<Vec<f64>>,
    /// Extra point mass per free node, kg.
    pub lumped_masses: Option<Vec<f64>>,
}

impl RopeParams {
    pub const DEFAULT_LINKS: usize = 25;
    pub const DEFAULT_JOINT_DAMPING: f64 = 2e-4;

    pub fn new(length: f64, lin_density: f64) -> Self {
        RopeParams {
            length,
            lin_density,
            n_links: Self::DEFAULT_LINKS,
            joint_damping: Self::DEFAULT_JOINT_DAMPING,
            link_length_override: None,
            lumped_masses: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(IrpError::contract("rope length must be positive"));
        }
        if !(self.lin_density > 0.0 && self.lin_density.is_finite()) {
            return Err(IrpError::contract("rope density must be positive"));
        }
        if self.n_links < 2 {
            return Err(IrpError::contract("rope needs at least 2 links"));
        }
        if self.joint_damping < 0.0 {
            return Err(IrpError::contract("joint damping must be non-negative"));
        }
        for (name, v) in [
            ("link_length_override", &self.link_length_override),
            ("lumped_masses", &self.lumped_masses),
        ] {
            if let Some(v) = v {
                if v.len() != self.n_links {
                    return Err(IrpError::contract(format!(
                        "{name} has {} entries, expected {}",
                        v.len(),
                        self.n_links
                    )));
                }
                if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(IrpError::contract(format!("{name} has invalid entries")));
                }
            }
        }
        if let Some(l) = &self.link_length_override {
            if l.iter().any(|x| *x <= 0.0) {
                return Err(IrpError::contract("link lengths must be positive"));
            }
        }
        Ok(())
    }

    pub fn link_lengths(&self) -> Vec<f64> {
        match &self.link_length_override {
            Some(l) => l.clone(),
            None => vec![self.length / self.n_links as f64; self.n_links],
        }
    }

    pub fn total_length(&self) -> f64 {
        self.link_lengths().iter().sum()
    }

    pub fn mass(&self) -> f64 {
        self.length * self.lin_density
    }

    /// Knot emulation: 25% shorter, with 20% of the rope mass lumped at the
    /// node next to the tip.
    pub fn knotted(&self) -> RopeParams {
        let n = self.n_links;
        let per_link = 0.75 * self.length / n as f64;
        let mut lumped = self.lumped_masses.clone().unwrap_or_else(|| vec![0.0; n]);
        lumped[n - 2] += 0.2 * self.mass();
        RopeParams {
            link_length_override: Some(vec![per_link; n]),
            lumped_masses: Some(lumped),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClothParams {
    /// Side length of the square cloth, m.
    pub size: f64,
    /// kg/m².
    pub area_density: f64,
    /// Particles per side; odd so the 3×3 keypoint lattice lands on particles.
    pub n_grid: usize,
}

impl ClothParams {
    pub const SIZE_RANGE: (f64, f64) = (0.4, 0.6);
    pub const DENSITY_RANGE: (f64, f64) = (0.2, 1.4);
    pub const DEFAULT_GRID: usize = 13;
    pub const DESK_GRID: usize = 9;

    pub fn new(size: f64, area_density: f64) -> Self {
        ClothParams {
            size,
            area_density,
            n_grid: Self::DEFAULT_GRID,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size > 0.0 && self.area_density > 0.0) {
            return Err(IrpError::contract("cloth size and density must be positive"));
        }
        if self.n_grid < 3 || self.n_grid % 2 == 0 {
            return Err(IrpError::contract(format!(
                "cloth grid must be odd and at least 3, got {}",
                self.n_grid
            )));
        }
        Ok(())
    }

    pub fn mass(&self) -> f64 {
        self.size * self.size * self.area_density
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldMode {
    Training,
    Deployment,
}

impl std::str::FromStr for WorldMode {
    type Err = IrpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(WorldMode::Training),
            "deployment" => Ok(WorldMode::Deployment),
            other => Err(IrpError::format(format!("unknown world '{other}'"))),
        }
    }
}

/// Simulator variant. The deployment world adds effects the training world
/// never shows (drag, floor contact), standing in for the sim2real gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldVariant {
    pub mode: WorldMode,
    /// Quadratic drag coefficient for the whole object, kg/m.
    pub drag_coeff: f64,
    /// Floor height, m.
    pub floor_z: f64,
    /// Scale of the initial-state perturbation (rad for rope link angles,
    /// m for cloth particle positions).
    pub init_noise_sd: f64,
    /// Length of the arm link the rope hangs from, m.
    pub embodiment_link: f64,
}

impl WorldVariant {
    pub const DEFAULT_LINK: f64 = 0.5;
    pub const EMBODIMENT_LINKS: [f64; 3] = [0.4, 0.5, 0.6];
    pub const DEFAULT_DRAG: f64 = 0.02;
    pub const DEFAULT_FLOOR_Z: f64 = -1.0;
    pub const DEFAULT_DEPLOY_NOISE: f64 = 0.02;

    pub fn training() -> Self {
        WorldVariant {
            mode: WorldMode::Training,
            drag_coeff: 0.0,
            floor_z: f64::NEG_INFINITY,
            init_noise_sd: 0.0,
            embodiment_link: Self::DEFAULT_LINK,
        }
    }

    pub fn deployment() -> Self {
        WorldVariant {
            mode: WorldMode::Deployment,
            drag_coeff: Self::DEFAULT_DRAG,
            floor_z: Self::DEFAULT_FLOOR_Z,
            init_noise_sd: Self::DEFAULT_DEPLOY_NOISE,
            embodiment_link: Self::DEFAULT_LINK,
        }
    }

    pub fn with_noise(self, sd: f64) -> Self {
        WorldVariant {
            init_noise_sd: sd,
            ..self
        }
    }

    pub fn with_link(self, link: f64) -> Self {
        WorldVariant {
            embodiment_link: link,
            ..self
        }
    }

    pub fn for_mode(mode: WorldMode) -> Self {
        match mode {
            WorldMode::Training => Self::training(),
            WorldMode::Deployment => Self::deployment(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == WorldMode::Training
            && (self.drag_coeff != 0.0 || self.floor_z != f64::NEG_INFINITY)
        {
            return Err(IrpError::contract(
                "training world has no drag and no floor",
            ));
        }
        if self.drag_coeff < 0.0 || self.init_noise_sd < 0.0 {
            return Err(IrpError::contract("drag and noise scale must be non-negative"));
        }
        if !(self.embodiment_link > 0.0) {
            return Err(IrpError::contract("embodiment link must be positive"));
        }
        Ok(())
    }

    pub fn has_floor(&self) -> bool {
        self.floor_z.is_finite()
    }
}
