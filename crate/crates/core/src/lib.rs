//! Height-map granular media shaping: sand model, kinematic tool world,
//! goal generation, synthetic perception, rewards, a gym-style environment,
//! baseline policies and the benchmark harness.

pub mod baselines;
pub mod cli;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod goals;
pub mod heightfield;
pub mod perception;
pub mod rewards;
pub mod world;

pub use error::{Error, Result};
