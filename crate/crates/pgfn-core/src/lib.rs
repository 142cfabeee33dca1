//! A desk-scale engine for training flow-based samplers restricted to
//! planner-selected partial regions of a factored action space, with
//! trajectory local search and exact-enumeration verification oracles.
//!
//! The numerics are generic over the scalar type through [`scalar::Scalar`];
//! the CLI and the concrete aliases below run at `f64`, with `f32` available
//! for cheaper sweeps.

pub mod env;
pub mod error;
pub mod harness;
pub mod local_search;
pub mod nn;
pub mod objectives;
pub mod oracle;
pub mod planner;
pub mod policy;
pub mod region;
pub mod rng;
pub mod scalar;
pub mod tasks;

pub use env::{Action, Environment, RewardEnv, Trajectory};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases, the default everywhere.
pub type Policy64 = nn::PolicyParams<f64>;
pub type Optimizer64 = nn::OptimizerState<f64>;
pub type ScoreTable64 = planner::ScoreTable<f64>;
pub type Trajectory64<St> = env::Trajectory<St, f64>;

/// Single-precision aliases.
pub type Policy32 = nn::PolicyParams<f32>;
pub type Optimizer32 = nn::OptimizerState<f32>;
pub type ScoreTable32 = planner::ScoreTable<f32>;
pub type Trajectory32<St> = env::Trajectory<St, f32>;
