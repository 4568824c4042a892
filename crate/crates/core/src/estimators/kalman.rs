//! Small-angle Kalman filter on `X = (θ, B)`.
//!
//! The linear model is `dX = A X dt + g dW`, `dZ = C X dt + dW` with
//!
//! ```text
//! A = [ 2F√(KM) − M/(2s²)   −γ ]    g = [ −√M/s − √K ]    C = [ −2√M F   0 ],   s = 1 + 2FMt
//!     [ 0                    0 ]        [ 0          ]
//! ```
//!
//! The estimate follows `dX̃ = A X̃ dt + (g + V Cᵀ) dW̃` with
//! `dW̃ = dZ + 2F√M θ̃ dt`, and the covariance obeys the Riccati equation
//! `V̇ = AV + VAᵀ + ggᵀ − (g + VCᵀ)(g + VCᵀ)ᵀ`, which reduces to a
//! `K`-independent closed form.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{MeasurementRecord, ModelParams};
use crate::error::{Error, Result};

/// Tolerance on negative covariance eigen-directions.
pub const PSD_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub theta: f64,
    pub b: f64,
    /// `Δθ̃²`
    pub v_theta: f64,
    /// `Δθ̃B̃`
    pub v_cross: f64,
    /// `ΔB̃²`
    pub v_b: f64,
}

impl KalmanState {
    /// `θ̃ = 0`, `B̃ = prior_mean`, `Δθ̃² = 1/(2F)`, `ΔB̃² = prior_var`.
    pub fn initial(f: f64, prior_mean: f64, prior_var: f64) -> Self {
        KalmanState {
            theta: 0.0,
            b: prior_mean,
            v_theta: 1.0 / (2.0 * f),
            v_cross: 0.0,
            v_b: prior_var,
        }
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        Matrix2::new(self.v_theta, self.v_cross, self.v_cross, self.v_b)
    }

    pub fn b_uncertainty(&self) -> f64 {
        self.v_b.max(0.0).sqrt()
    }
}

fn s_factor(f: f64, m: f64, t: f64) -> f64 {
    1.0 + 2.0 * f * m * t
}

/// Closed-form right-hand side `(d Δθ̃², d Δθ̃B̃, d ΔB̃²)/dt`. Depends on
/// `(V, t, F, M, γ)` only.
pub fn variance_rhs(v: (f64, f64, f64), t: f64, f: f64, m: f64, gamma: f64) -> (f64, f64, f64) {
    let (vt, vc, vb) = v;
    let s = s_factor(f, m, t);
    let f2 = f * f;
    let dvt = -m * vt * ((1.0 + 4.0 * f + 8.0 * f2 * m * t) / (s * s) + 4.0 * f2 * vt) - 2.0 * gamma * vc;
    let dvc = -gamma * vb - m / (2.0 * s * s) * (1.0 + 4.0 * f + 8.0 * f2 * m * t + 8.0 * f2 * s * s * vt) * vc;
    let dvb = -4.0 * f2 * m * vc * vc;
    (dvt, dvc, dvb)
}

/// `(A, g, C)` at time `t`.
pub fn linear_model(params: &ModelParams, t: f64) -> (Matrix2<f64>, Vector2<f64>, Vector2<f64>) {
    let f = params.spin.value();
    let s = s_factor(f, params.m, t);
    let a11 = 2.0 * f * (params.k * params.m).sqrt() - params.m / (2.0 * s * s);
    let a = Matrix2::new(a11, -params.gamma, 0.0, 0.0);
    let g = Vector2::new(-params.m.sqrt() / s - params.k.sqrt(), 0.0);
    let c = Vector2::new(-2.0 * params.m.sqrt() * f, 0.0);
    (a, g, c)
}

/// Riccati right-hand side assembled from the matrices.
pub fn variance_rhs_matrix(v: &Matrix2<f64>, params: &ModelParams, t: f64) -> Matrix2<f64> {
    let (a, g, c) = linear_model(params, t);
    let gain = g + v * c;
    a * v + v * a.transpose() + g * g.transpose() - gain * gain.transpose()
}

fn rhs_of(k: &KalmanState, params: &ModelParams, t: f64) -> (f64, f64, f64) {
    variance_rhs((k.v_theta, k.v_cross, k.v_b), t, params.spin.value(), params.m, params.gamma)
}

/// One predictor-corrector step on the estimate and covariance, driven by
/// the photocurrent increment `dz`.
pub fn kalman_step(k: &KalmanState, dz: f64, params: &ModelParams, t: f64) -> Result<KalmanState> {
    let dt = params.dt;
    let f = params.spin.value();
    let dw = dz + 2.0 * f * params.m.sqrt() * k.theta * dt;

    let (a0, g0, c) = linear_model(params, t);
    let (a1, _, _) = linear_model(params, t + dt);
    let v0 = k.covariance();
    let gain = g0 + v0 * c;
    let x0 = Vector2::new(k.theta, k.b);
    let pred = x0 + a0 * x0 * dt + gain * dw;
    let x1 = x0 + (a0 * x0 + a1 * pred) * (0.5 * dt) + gain * dw;

    let d0 = rhs_of(k, params, t);
    let kp = KalmanState {
        v_theta: k.v_theta + d0.0 * dt,
        v_cross: k.v_cross + d0.1 * dt,
        v_b: k.v_b + d0.2 * dt,
        ..*k
    };
    let d1 = rhs_of(&kp, params, t + dt);
    let next = KalmanState {
        theta: x1[0],
        b: x1[1],
        v_theta: k.v_theta + 0.5 * (d0.0 + d1.0) * dt,
        v_cross: k.v_cross + 0.5 * (d0.1 + d1.1) * dt,
        v_b: k.v_b + 0.5 * (d0.2 + d1.2) * dt,
    };
    let det = next.v_theta * next.v_b - next.v_cross * next.v_cross;
    let scale = next.v_theta.abs().max(next.v_b.abs()).max(1.0);
    if next.v_theta < -PSD_TOLERANCE || next.v_b < -PSD_TOLERANCE || det < -PSD_TOLERANCE * scale * scale {
        return Err(Error::CovarianceIndefinite { time: t + dt, det });
    }
    if ![next.theta, next.b, next.v_theta, next.v_cross, next.v_b].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            step: (t / dt).round() as usize,
            time: t + dt,
        });
    }
    Ok(next)
}

/// Covariance alone, integrated over `params.n_steps()` steps. Returns
/// `ΔB̃²` before every step and after the last.
pub fn b_variance_trajectory(params: &ModelParams, prior_var: f64) -> Vec<f64> {
    let f = params.spin.value();
    let mut k = KalmanState::initial(f, 0.0, prior_var);
    let mut out = Vec::with_capacity(params.n_steps() + 1);
    out.push(k.v_b);
    for i in 0..params.n_steps() {
        let t = i as f64 * params.dt;
        let d0 = rhs_of(&k, params, t);
        let kp = KalmanState {
            v_theta: k.v_theta + d0.0 * params.dt,
            v_cross: k.v_cross + d0.1 * params.dt,
            v_b: k.v_b + d0.2 * params.dt,
            ..k
        };
        let d1 = rhs_of(&kp, params, t + params.dt);
        k.v_theta += 0.5 * (d0.0 + d1.0) * params.dt;
        k.v_cross += 0.5 * (d0.1 + d1.1) * params.dt;
        k.v_b += 0.5 * (d0.2 + d1.2) * params.dt;
        out.push(k.v_b);
    }
    out
}

/// Filters `record` with its own model, returning the state before every
/// step and after the last.
pub fn run_kalman(record: &MeasurementRecord, prior_mean: f64, prior_var: f64) -> Result<Vec<KalmanState>> {
    let params = record.params;
    params.validate()?;
    let mut k = KalmanState::initial(params.spin.value(), prior_mean, prior_var);
    let mut out = Vec::with_capacity(record.len() + 1);
    out.push(k);
    for (i, &dz) in record.dz.iter().enumerate() {
        k = kalman_step(&k, dz, &params, i as f64 * params.dt)?;
        out.push(k);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::Spin;
    use rand::Rng;

    fn params(f: f64, m: f64, k: f64) -> ModelParams {
        ModelParams::new(Spin::new(f).unwrap(), m, k, 0.0)
    }

    #[test]
    fn closed_form_matches_matrix_riccati() {
        let mut rng = crate::sde::seeded_rng(5, 0);
        for k in [0.0, 6e-4, 1.0] {
            let p = params(12.0, 10.0, k);
            for _ in 0..200 {
                let vt: f64 = rng.random_range(0.0..0.1);
                let vb: f64 = rng.random_range(0.0..10.0);
                let vc = rng.random_range(-1.0..1.0f64) * (vt * vb).sqrt();
                let t = rng.random_range(0.0..0.1);
                let m = variance_rhs_matrix(&Matrix2::new(vt, vc, vc, vb), &p, t);
                let (dt, dc, db) = variance_rhs((vt, vc, vb), t, 12.0, 10.0, 1.0);
                let scale = m.abs().max().max(1.0);
                assert!((m[(0, 0)] - dt).abs() < 1e-10 * scale);
                assert!((m[(0, 1)] - dc).abs() < 1e-10 * scale);
                assert!((m[(1, 0)] - dc).abs() < 1e-10 * scale);
                assert!((m[(1, 1)] - db).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn b_variance_frozen_without_cross_term() {
        let (_, _, db) = variance_rhs((0.05, 0.0, 10.0), 0.03, 10.0, 10.0, 1.0);
        assert_eq!(db, 0.0);
    }

    #[test]
    fn b_variance_never_increases() {
        let p = params(30.0, 10.0, 0.0);
        let traj = b_variance_trajectory(&p, 10.0);
        assert!(traj.windows(2).all(|w| w[1] <= w[0]));
        assert!(traj.last().unwrap() < &10.0);
    }

    #[test]
    fn second_pass_does_not_change_covariance() {
        let a = b_variance_trajectory(&params(20.0, 10.0, 0.0), 10.0);
        let b = b_variance_trajectory(&params(20.0, 10.0, 1.0), 10.0);
        assert_eq!(a, b);
    }

    #[test]
    fn step_keeps_covariance_symmetric_and_definite() {
        let p = ModelParams {
            t_final: 1e-2,
            ..params(10.0, 10.0, 6e-4)
        };
        let record = crate::dynamics::generate_record(&p, 3).unwrap();
        let states = run_kalman(&record, 0.0, 10.0).unwrap();
        for s in &states {
            assert!(s.covariance().symmetric_eigenvalues().min() > -PSD_TOLERANCE);
        }
        assert_eq!(states.len(), record.len() + 1);
        assert!(states.last().unwrap().v_b < 10.0);
    }

    #[test]
    fn indefinite_covariance_is_reported() {
        let p = params(10.0, 10.0, 0.0);
        let bad = KalmanState {
            theta: 0.0,
            b: 0.0,
            v_theta: 1.0,
            v_cross: 5.0,
            v_b: 1.0,
        };
        assert!(matches!(kalman_step(&bad, 0.0, &p, 0.0), Err(Error::CovarianceIndefinite { .. })));
    }

    #[test]
    fn zero_record_keeps_prior_estimate() {
        let p = ModelParams {
            t_final: 1e-3,
            ..params(5.0, 10.0, 0.0)
        };
        let mut k = KalmanState::initial(5.0, 0.0, 10.0);
        for i in 0..p.n_steps() {
            k = kalman_step(&k, 0.0, &p, i as f64 * p.dt).unwrap();
        }
        assert_eq!((k.theta, k.b), (0.0, 0.0));
    }
}
