//! Energy-constrained UAV routing with wireless recharging.
//!
//! The crate bundles everything needed to study the mission-time minimization
//! problem of a battery-limited rotary-wing UAV that is recharged remotely by
//! its base station:
//!
//! - [`energy`]: flight power model and the two-stage wireless charging model;
//! - [`instance`] / [`solution`] / [`eval`]: problem instances, route
//!   representation, state-of-charge simulation, cost and feasibility;
//! - [`policy`]: attention encoder-decoder that constructs routes node by
//!   node, with hand-rolled forward and backward passes;
//! - [`decode`]: greedy, best-of-k sampling and beam-search construction;
//! - [`train`]: policy-gradient training with a greedy rollout baseline;
//! - [`solvers`]: nearest-neighbor, savings and local-search baselines plus
//!   an exhaustive optimum for tiny instances.

pub mod decode;
pub mod energy;
pub mod error;
pub mod eval;
pub mod instance;
pub mod policy;
pub mod solution;
pub mod solvers;
pub mod train;

pub use error::{Error, Result};
