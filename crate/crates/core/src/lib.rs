//! Delay-constrained optimal stopping for a secondary user that senses `M`
//! channels one after another within each slot.
//!
//! * [`model`] holds the problem instance (channels, fading law, timing,
//!   constraints, stopping policy).
//! * [`analytic`] evaluates a policy exactly through backward recursions.
//! * [`solver`] computes optimal thresholds and Lagrange multipliers, for
//!   unit power and for water-filling power control.
//! * [`sim`] is an independent Monte Carlo slot simulator.
//! * [`experiment`] drives parameter sweeps and emits CSV / JSON-lines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod experiment;
pub mod model;
pub mod quad;
pub mod sim;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
