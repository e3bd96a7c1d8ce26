//! Stochastic approximation of the Value-at-Risk and Expected Shortfall of a
//! loss given as a conditional expectation, `X0 = E[phi(Y, Z) | Y]`.
//!
//! Three estimators share the same two-time-scale recursion:
//!
//! * classical SA when `X0` can be sampled exactly,
//! * nested SA on the inner Monte Carlo approximation `X_h`, `h = 1/K`,
//! * multilevel SA telescoping nested chains over `h_l = h_0 / M^l`.
//!
//! [`tuning`] turns a target accuracy into iteration budgets and [`bench`]
//! runs replicated experiments and complexity comparisons.

pub mod bench;
pub mod config;
pub mod engine;
pub mod error;
pub mod measures;
pub mod models;
pub mod rng;
pub mod samplers;
pub mod tuning;

pub use error::{Error, Result};
