//! Simulation and estimation toolkit for a double-pass, continuously measured
//! collective-spin magnetometer.
//!
//! The crate is organised bottom-up:
//!
//! - [`spin`]: collective spin operators, coherent/rotated/squeezed states,
//!   expectations and the Husimi Q-function.
//! - [`sde`]: seeded Wiener increments and a predictor-corrector integrator for
//!   Itô and Stratonovich systems, including the Itô→Stratonovich drift
//!   correction.
//! - [`dynamics`]: the double-pass quantum filter (adjoint, Itô SSE and
//!   Stratonovich SSE forms), measurement-record generation and innovations.
//! - [`fisher`]: finite-difference quantum Fisher information, Cramér-Rao
//!   bound sweeps, analytic baselines and power-law fits.
//! - [`estimators`]: the quantum particle filter, the Gaussian projection
//!   filter and the small-angle Kalman filter for the field.
//!
//! Units follow the usual convention for this problem: rates (`M`, `K`) and
//! fields (`B`, with `γ = 1`) are in units of an arbitrary frequency `ν`, and
//! times in `1/ν`.

pub mod amplitude;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod fisher;
pub mod parallel;
pub mod sde;
pub mod spin;
pub mod stats;

pub use amplitude::Amplitude;
pub use error::{Error, Result};
pub use spin::Spin;
