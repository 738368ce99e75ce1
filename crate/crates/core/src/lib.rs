//! Grid-forming converter models with current saturation: phasor network
//! reduction, complex-droop control with a circular limiter, saturated
//! equilibria, sufficient transient-stability conditions and a fault-ride-through
//! time-domain simulator.

// Validation uses `!(x > 0.0)` so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod equilibrium;
pub mod error;
pub mod network;
pub mod phasor;
pub mod scenario;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};
pub use phasor::Phasor;
