//! Numerical laboratory for the one-dimensional damped nonlinear
//! Klein-Gordon equation
//!
//! `u_tt - u_xx + 2 alpha u_t + u - gamma delta_0 u - |u|^{p-1} u = 0`
//!
//! with a point interaction at the origin: stationary profiles, a damped
//! finite-difference integrator with an exact energy ledger, certified
//! blowup/decay classification, threshold shooting, modulation analysis of
//! the soliton center, and Nehari-constrained ground-state levels.

// Negated float comparisons (`!(x > 0.0)`) are used on purpose: they also
// reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod field;
pub mod modulation;
pub mod output;
pub mod profiles;
pub mod quadrature;
pub mod variational;

pub use error::{Error, Result};
pub use field::{make_grid, GridSpec, State};
pub use profiles::PhysParams;
