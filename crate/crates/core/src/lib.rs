//! Variance-optimal hedging in discrete time.
//!
//! The crate computes the initial capital and the self-financing strategy that
//! minimize the mean squared hedging error of a European payoff, for
//! regime-switching geometric random walks and GARCH-type models, and provides
//! the tooling to evaluate those strategies by simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hedging;
pub mod models;
pub mod numerics;
pub mod oracle;
pub mod payoff;
pub mod simulator;
pub mod solver;

pub use error::{HedgeError, Result};
