//! LP bounds for the Cesàro and Abel limits of optimal values in finite
//! controlled stochastic recursions.
//!
//! The crate computes the optimal values of the stationary, discounted and
//! augmented occupational-measure linear programs of a [`model::FiniteModel`]
//! together with their dual certificates, and checks them against the
//! dynamic-programming values `v_T` (finite-horizon average) and `h_eps`
//! (normalized discounted).
//!
//! Modules, bottom up:
//! - [`model`]: states, controls, noise, dynamics, cost; builders and the JSON file format.
//! - [`lp`]: a two-phase revised simplex returning primal and dual solutions.
//! - [`programs`]: the measure LPs and their dual certificates.
//! - [`dp`]: backward recursion, value iteration, feedback extraction.
//! - [`measures`]: exact state-law propagation, occupational measures, metrics, periodicity.
//! - [`analysis`]: bound reports, optimality certification, window lemmas.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod analysis;
pub mod dp;
pub mod error;
pub mod lp;
pub mod measures;
pub mod model;
pub mod output;
pub mod programs;

pub use error::{Error, Result};
pub use model::FiniteModel;
