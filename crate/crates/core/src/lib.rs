//! Fitted Q-iteration (least-squares value iteration) with constrained deep
//! ReLU networks on synthetic continuous MDPs, together with the numerical
//! machinery used to probe its statistical behaviour: Besov smoothness
//! measurement, concentration coefficients, Bellman-residual decomposition,
//! local Rademacher complexities and sample-complexity rate exponents.
//!
//! Module map:
//!
//! - [`mdp`]: synthetic MDPs, the visitation sampler, grid ground truth and
//!   concentration estimates.
//! - [`relu`]: the sparse, norm-bounded ReLU network class and its trainer.
//! - [`fqi`]: the LSVI loop for evaluation and learning, residual
//!   measurement, data reuse versus splitting.
//! - [`besov`]: translation differences, moduli of smoothness, Besov
//!   seminorms and smoothness-exponent estimation.
//! - [`rademacher`]: empirical and localized Rademacher averages, sub-root
//!   fixed points and rate exponents.
//! - [`harness`]: seeded sweeps, rate fitting, decomposition audits and
//!   report emission.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod besov;
pub mod error;
pub mod fqi;
pub mod harness;
pub mod mdp;
pub mod rademacher;
pub mod relu;
pub mod stats;

pub use error::{Error, Result};
