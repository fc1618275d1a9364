//! Path-wise simulation and random-attractor analysis for stochastic delayed
//! Hopfield networks
//!
//! ```text
//! du = [-C u + H f(u) + B g(u_delayed)] dt + Sigma (u ⋄ dW).
//! ```
//!
//! Modules, bottom-up:
//!
//! * [`model`]: parameters, activations and history segments;
//! * [`noise`]: two-sided Wiener paths, the shift and Wong–Zakai interpolants;
//! * [`linearflow`]: the fundamental solution of the noise-only equation;
//! * [`integrator`]: direct, conjugated and Wong–Zakai integration routes;
//! * [`spectral`]: characteristic roots, fundamental solution and decay constants;
//! * [`conditions`]: absorbing-set and contraction constants and verdicts;
//! * [`attractor`]: pullback, cocycle, Wong–Zakai and stationary-point experiments;
//! * [`config`]: JSON run configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attractor;
pub mod conditions;
pub mod config;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod linearflow;
pub mod model;
pub mod noise;
pub mod spectral;

pub use error::{Error, Result};
