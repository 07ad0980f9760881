//! Kalman-filter disturbance observers for linear systems with unknown inputs,
//! batch reference estimators, and a seeded Monte Carlo harness.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod output;
pub mod scenario;
pub mod verify;

pub use error::{DobError, Result};
pub use model::{augment, AugmentedModel, GaussianBelief, LinearSystem, StateSpaceModel};
