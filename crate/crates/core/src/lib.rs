//! Iterative residual policy (IRP) workbench.
//!
//! Goal-conditioned dynamic manipulation of deformable objects by repeated
//! execution: run an action, observe the trajectory, predict how sampled
//! action perturbations would change that trajectory, execute the
//! perturbation predicted to land closest to the goal, repeat.
//!
//! The crate contains two simulators (rope whipping and cloth placement), the
//! occupancy-grid trajectory representation, offline dataset generation,
//! three delta-dynamics predictors, the IRP loop, the comparison baselines and
//! an evaluation harness with a domain-shifted deployment world.

pub mod action;
pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod irp;
pub mod optim;
pub mod params;
pub mod predictor;
pub mod raster;
pub mod rng;
pub mod sim;
pub mod trajectory;

pub use action::{apply_delta, ClothAction, ClothActionBox, DeltaAction, RopeAction, Task};
pub use error::{IrpError, Result};
pub use params::{ClothParams, RopeParams, WorldMode, WorldVariant};
pub use raster::{GridSpec, OccupancyGrid};
pub use rng::RngStream;
pub use trajectory::{Goal, TrackPoint, Trajectory};
