//! Projection filter onto the rotated, squeezed Gaussian family
//! `|θ, ξ⟩ = e^{−iθF_y} e^{−2iξ(F_zF_y + F_yF_z)} |F, +F_x⟩`.
//!
//! In Itô form
//!
//! ```text
//! dθ = [ −γB − (M/4) e^{−16Fξ} sin 2θ + 2F√(KM) sin θ ] dt − [ √M e^{−8Fξ} cos θ + √K ] dW
//! dξ = (M/4) e^{−8Fξ} cos²θ dt
//! ```
//!
//! with innovations `dW = dZ + 2F√M sin θ dt`, since `⟨F_z⟩ ≈ −F sin θ`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{MeasurementRecord, ModelParams};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub theta: f64,
    pub xi: f64,
}

impl GaussianState {
    /// `⟨F_z⟩` within the family.
    pub fn fz(&self, f: f64) -> f64 {
        -f * self.theta.sin()
    }
}

/// Itô coefficients `(a_θ, b_θ, a_ξ)` at `g` for field `b`.
pub fn projection_coefficients(g: &GaussianState, params: &ModelParams, b: f64) -> (f64, f64, f64) {
    let f = params.spin.value();
    let sm = params.m.sqrt();
    let skm = (params.k * params.m).sqrt();
    let e8 = (-8.0 * f * g.xi).exp();
    let (s, c) = g.theta.sin_cos();
    let a_theta = -params.gamma * b - 0.25 * params.m * e8 * e8 * (2.0 * g.theta).sin() + 2.0 * f * skm * s;
    let b_theta = -(sm * e8 * c + params.k.sqrt());
    let a_xi = 0.25 * params.m * e8 * c * c;
    (a_theta, b_theta, a_xi)
}

/// `dW = dZ + 2F√M sin θ dt`
pub fn projection_innovations(g: &GaussianState, dz: f64, params: &ModelParams) -> f64 {
    dz + 2.0 * params.spin.value() * params.m.sqrt() * g.theta.sin() * params.dt
}

/// One predictor-corrector step driven by the innovation `dw`, with the
/// field taken from `params.b`.
pub fn projection_step(g: &GaussianState, dw: f64, params: &ModelParams, _t: f64) -> GaussianState {
    let dt = params.dt;
    let (a0, b0, x0) = projection_coefficients(g, params, params.b);
    let pred = GaussianState {
        theta: g.theta + a0 * dt + b0 * dw,
        xi: g.xi + x0 * dt,
    };
    let (a1, _, x1) = projection_coefficients(&pred, params, params.b);
    GaussianState {
        theta: g.theta + 0.5 * (a0 + a1) * dt + b0 * dw,
        xi: g.xi + 0.5 * (x0 + x1) * dt,
    }
}

/// `ξ_t = ln(1 + 2FMt) / (8F)`
pub fn xi_closed_form(t: f64, f: f64, m: f64) -> f64 {
    (2.0 * f * m * t).ln_1p() / (8.0 * f)
}

/// Runs the projection filter over `record` at field `params.b`, returning
/// the state before every step and after the last one.
pub fn run_projection(record: &MeasurementRecord, params: &ModelParams) -> Result<Vec<GaussianState>> {
    params.validate()?;
    let mut g = GaussianState::default();
    let mut out = Vec::with_capacity(record.len() + 1);
    out.push(g);
    for (k, &dz) in record.dz.iter().enumerate() {
        let dw = projection_innovations(&g, dz, params);
        g = projection_step(&g, dw, params, k as f64 * params.dt);
        out.push(g);
    }
    Ok(out)
}
