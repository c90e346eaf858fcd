//! Optimal threshold sampling of a shared memory by a reader process.
//!
//! A writer publishes fresh updates to memory with probability `p` per slot;
//! a reader pays `c` per read and wants to keep the client's update age low.
//! This crate evaluates the problem three independent ways:
//!
//! - [`analytic`]: closed-form average cost of threshold policies, the
//!   optimal threshold, a lower bound and first-passage costs;
//! - [`solver`]: discounted and relative value iteration on a truncated
//!   state grid, with checks of the structural properties of the solution;
//! - [`sim`]: seeded slot-level Monte Carlo simulation.

pub mod analytic;
pub mod error;
pub mod model;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    stage_cost, transition, Action, AgeState, ModelParams, ThresholdPolicy, TransitionLaw,
};
