//! Simulation and Lyapunov-certificate toolkit for practical stability of
//! Itô SDEs `dx = f(x,t) dt + g(x,t) dW` whose origin need not be an
//! equilibrium.
//!
//! * [`model`]: SDE models and sampled regularity checks.
//! * [`noise`], [`sim`]: reproducible Brownian increments, Euler-Maruyama
//!   and Milstein integration, path ensembles, the exact OU law.
//! * [`lyapunov`]: Lyapunov functions and the Itô generator `LV`.
//! * [`certify`]: exponential and practical stability certificates checked
//!   on sampled domains.
//! * [`estimate`]: Monte Carlo frequency estimators with Wilson intervals.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod error;
pub mod estimate;
pub mod lyapunov;
pub mod model;
pub mod noise;
pub mod sampler;
pub mod sim;
pub mod tolerance;

pub use error::{Error, Result};
