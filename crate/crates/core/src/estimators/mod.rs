//! Online field estimators driven by a measurement record.
//!
//! - [`particle`]: the quantum particle filter, exact per-particle dynamics.
//! - [`projection`]: the Gaussian `(θ, ξ)` projection filter.
//! - [`kalman`]: the small-angle Kalman filter on `(θ, B)`.

pub mod kalman;
pub mod particle;
pub mod projection;

pub use kalman::{kalman_step, run_kalman, KalmanState};
pub use particle::{
    effective_sample_size, estimate, init_ensemble, particle_step, particle_sweep, run_particle_filter, InnovationMode, ParticleConfig,
    ParticleEnsemble, ParticleRun, ParticleSweep,
};
pub use projection::{projection_step, xi_closed_form, GaussianState};
