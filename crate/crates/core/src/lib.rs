//! Optimal moving dividend barrier for the two-dimensional singular control
//! problem with absorption.
//!
//! The pipeline is: [`model`] builds the fundamental solutions of the killed
//! generator, [`barrier`] integrates the boundary ODE `b' = F(x, b)` and picks
//! its minimal solution staying above the diagonal, [`value`] evaluates the
//! candidate value function in quadrature form and checks the variational
//! system, and [`simulate`] validates everything by Monte Carlo. [`gbm`] holds
//! the closed-form solution for geometric Brownian motion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub(crate) mod dd;
pub mod error;
pub mod exec;
pub mod gbm;
pub mod interp;
pub mod model;
pub mod ode;
pub mod output;
pub mod simulate;
pub mod value;

pub use error::{Error, Result};
