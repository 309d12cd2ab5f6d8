//! Mean-field market-clearing equilibrium on a recombining binomial lattice.
//!
//! Heterogeneous agents with exponential or recursive exponential-type utility hedge
//! liabilities driven by the stock, a common factor `Y` and idiosyncratic factors `Z`.
//! The solver finds, node by node, the stock's up-probability that makes the
//! cross-sectional mean position equal the external per-capita supply.
//!
//! - [`lattice`]: tree geometry, factor chains and path indexing.
//! - [`market`]: agents, populations and scenario functions.
//! - [`solver`]: backward induction and closed-form kernels.
//! - [`analysis`]: forward laws and reported statistics.
//! - [`convergence`]: finite-population Monte Carlo diagnostics.
//! - [`config`]: JSON scenario documents and bundled presets.

// Negated comparisons reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod convergence;
pub mod error;
pub mod lattice;
pub mod market;
pub mod numerics;
pub mod solver;

pub use error::{MfeError, Result};
