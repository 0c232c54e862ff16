//! Plants: something that executes a normalized action and returns the
//! observed trajectory. Step indices are 0-based iteration numbers; each
//! step draws its initial-state perturbation from its own seed.

use std::sync::Arc;

use crate::action::{ClothAction, ClothActionBox, RopeAction, Task};
use crate::error::Result;
use crate::params::{ClothParams, RopeParams, WorldVariant};
use crate::rng::derive_seed;
use crate::trajectory::Trajectory;

use super::{execute_swing, execute_whip};

pub trait Plant: Send + Sync {
    fn task(&self) -> Task;

    fn execute(&self, a_norm: &[f64], step: usize) -> Result<Trajectory>;
}

#[derive(Debug, Clone)]
pub struct RopePlant {
    pub params: RopeParams,
    pub world: WorldVariant,
    pub seed: u64,
}

impl RopePlant {
    pub fn new(params: RopeParams, world: WorldVariant, seed: u64) -> Self {
        RopePlant {
            params,
            world,
            seed,
        }
    }
}

impl Plant for RopePlant {
    fn task(&self) -> Task {
        Task::Rope
    }

    fn execute(&self, a_norm: &[f64], step: usize) -> Result<Trajectory> {
        let action = RopeAction::denormalize(a_norm)?;
        execute_whip(
            &self.params,
            &action,
            &self.world,
            derive_seed(self.seed, &[step as u64]),
        )
    }
}

#[derive(Debug, Clone)]
pub struct ClothPlant {
    pub params: ClothParams,
    pub action_box: ClothActionBox,
    pub world: WorldVariant,
    pub seed: u64,
}

impl ClothPlant {
    pub fn new(params: ClothParams, world: WorldVariant, seed: u64) -> Self {
        ClothPlant {
            params,
            action_box: ClothActionBox::default(),
            world,
            seed,
        }
    }
}

impl Plant for ClothPlant {
    fn task(&self) -> Task {
        Task::Cloth
    }

    fn execute(&self, a_norm: &[f64], step: usize) -> Result<Trajectory> {
        let action = ClothAction::denormalize(a_norm, &self.action_box)?;
        execute_swing(
            &self.params,
            &action,
            &self.action_box,
            &self.world,
            derive_seed(self.seed, &[step as u64]),
        )
    }
}

/// Switches to a second plant from `swap_step` on (online adaptation).
#[derive(Clone)]
pub struct SwapPlant {
    pub before: Arc<dyn Plant>,
    pub after: Arc<dyn Plant>,
    pub swap_step: usize,
}

impl Plant for SwapPlant {
    fn task(&self) -> Task {
        self.before.task()
    }

    fn execute(&self, a_norm: &[f64], step: usize) -> Result<Trajectory> {
        if step >= self.swap_step {
            self.after.execute(a_norm, step)
        } else {
            self.before.execute(a_norm, step)
        }
    }
}
