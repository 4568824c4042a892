//! Quantum Cramér-Rao bounds from finite-difference Fisher information.
//!
//! Three copies of the SSE at fields `B − δB`, `B` and `B + δB` are evolved on
//! one noise path. With `D = (ρ₊ − ρ₋)/(2δB)` the pure-state Fisher
//! information is `ℐ = 4 Tr(D² ρ₀) = 4 ‖D|ψ₀⟩‖²`, and the bound on any
//! unbiased field estimate is `δB ≥ 1/√ℐ`.

use serde::{Deserialize, Serialize};

use crate::amplitude;
use crate::dynamics::{ModelParams, Rates, SseForm, SseKernel, SseSystem};
use crate::error::{Error, Result};
use crate::parallel;
use crate::sde::{self, Stepper};
use crate::spin::{self, Spin};
use crate::stats;

/// Outlier threshold, in robust standard deviations.
pub const OUTLIER_SIGMAS: f64 = 5.0;

/// Fraction of failed trajectories above which a sweep point is dropped.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QfiSample {
    pub seed: u64,
    pub spin: Spin,
    pub qfi: f64,
    /// `1/√qfi`
    pub bound: f64,
}

/// `4 ‖D ψ₀‖²` for real amplitude vectors.
fn pure_state_qfi(minus: &[f64], centre: &[f64], plus: &[f64], delta_b: f64) -> f64 {
    let op = amplitude::inner(plus, centre);
    let om = amplitude::inner(minus, centre);
    let scale = 1.0 / (2.0 * delta_b);
    let d2: f64 = plus
        .iter()
        .zip(minus)
        .map(|(p, m)| ((p * op - m * om) * scale).powi(2))
        .sum();
    4.0 * d2
}

/// Finite-difference QFI of one trajectory, expanded about `params.b`.
pub fn qfi_sample(params: &ModelParams, delta_b: f64, seed: u64) -> Result<QfiSample> {
    params.validate()?;
    if !(delta_b > 0.0 && delta_b.is_finite()) {
        return Err(Error::param("deltaB", format!("must be positive, got {delta_b}")));
    }
    let n = params.n_steps();
    let noise = sde::wiener_path(seed, n, params.dt)?;
    let kernel = SseKernel::new(params.spin);
    let fields = [params.b - delta_b, params.b, params.b + delta_b];
    let systems: Vec<SseSystem<'_, f64>> = fields
        .iter()
        .map(|&b| SseSystem::new(&kernel, Rates::with_field(params, b), SseForm::Ito))
        .collect();
    let start = spin::x_polarized_real(params.spin);
    let mut states = [start.clone(), start.clone(), start];
    let mut stepper = Stepper::new(kernel.dim());
    for (k, &dw) in noise.increments.iter().enumerate() {
        let t = k as f64 * params.dt;
        for (system, x) in systems.iter().zip(states.iter_mut()) {
            stepper.step(system, t, x, dw, params.dt);
        }
        if k % 256 == 255 || k + 1 == n {
            for x in &states {
                sde::check_finite(x, k, t + params.dt)?;
            }
        }
    }
    let qfi = pure_state_qfi(&states[0], &states[1], &states[2], delta_b);
    if !qfi.is_finite() || qfi <= f64::EPSILON {
        return Err(Error::DegenerateFisher { qfi });
    }
    Ok(QfiSample {
        seed,
        spin: params.spin,
        qfi,
        bound: 1.0 / qfi.sqrt(),
    })
}

/// Ensemble statistics of the per-trajectory bound at one spin size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub spin: Spin,
    pub mean_bound: f64,
    /// Population standard deviation across trajectories.
    pub std_bound: f64,
    pub n_trajectories: usize,
    pub n_failed: usize,
    /// Trajectories beyond [`OUTLIER_SIGMAS`] robust deviations. Flagged only,
    /// still included in the statistics.
    pub n_outliers: usize,
    pub samples: Vec<QfiSample>,
}

/// A sweep point discarded because too many trajectories failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedPoint {
    pub spin: Spin,
    pub n_failed: usize,
    pub first_error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub points: Vec<ScalingPoint>,
    pub dropped: Vec<DroppedPoint>,
}

impl BoundSweep {
    pub fn point(&self, spin: Spin) -> Option<&ScalingPoint> {
        self.points.iter().find(|p| p.spin == spin)
    }

    /// Power-law fit of mean bound against `F`.
    pub fn fit(&self) -> Result<PowerLawFit> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.spin.value(), p.mean_bound)).collect();
        power_law_fit(&pts)
    }
}

/// Per-trajectory bounds for every spin in `spins`. Trajectory `i` at index
/// `j` uses seed `base_seed + j·10⁶ + i`; output is independent of `workers`.
pub fn bound_sweep(
    spins: &[Spin],
    template: &ModelParams,
    delta_b: f64,
    n_traj: usize,
    base_seed: u64,
    workers: usize,
) -> Result<BoundSweep> {
    if spins.is_empty() {
        return Err(Error::param("F_list", "must not be empty"));
    }
    if n_traj < 2 {
        return Err(Error::param("n_trajectories", "need at least two trajectories"));
    }
    template.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spins.len())
        .flat_map(|j| (0..n_traj).map(move |i| (j, i)))
        .collect();
    let results = parallel::map_ordered(jobs, workers, |(j, i)| {
        let params = template.with_spin(spins[j]);
        qfi_sample(&params, delta_b, parallel::trajectory_seed(base_seed, j, i))
    })?;
    let mut sweep = BoundSweep::default();
    for (j, chunk) in results.chunks(n_traj).enumerate() {
        let mut samples = Vec::with_capacity(n_traj);
        let mut failures = Vec::new();
        for r in chunk {
            match r {
                Ok(s) => samples.push(*s),
                Err(e) => failures.push(e.to_string()),
            }
        }
        if failures.len() as f64 > MAX_FAILURE_FRACTION * n_traj as f64 || samples.len() < 2 {
            sweep.dropped.push(DroppedPoint {
                spin: spins[j],
                n_failed: failures.len(),
                first_error: failures.into_iter().next().unwrap_or_default(),
            });
            continue;
        }
        let bounds: Vec<f64> = samples.iter().map(|s| s.bound).collect();
        sweep.points.push(ScalingPoint {
            spin: spins[j],
            mean_bound: stats::mean(&bounds),
            std_bound: stats::population_std(&bounds),
            n_trajectories: samples.len(),
            n_failed: failures.len(),
            n_outliers: stats::outliers(&bounds, OUTLIER_SIGMAS).len(),
            samples,
        });
    }
    Ok(sweep)
}

/// `1/(γ t √(2F))`
pub fn shotnoise_bound(f: f64, t: f64, gamma: f64) -> f64 {
    1.0 / (gamma * t * (2.0 * f).sqrt())
}

/// `α/(γ t F)`
pub fn heisenberg_bound(f: f64, t: f64, gamma: f64, alpha: f64) -> f64 {
    alpha / (gamma * t * f)
}

/// `1/(γ t F^k)`
pub fn kbody_bound(f: f64, t: f64, gamma: f64, k: u32) -> f64 {
    1.0 / (gamma * t * f.powi(k as i32))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Euclidean norm of the log-space residuals.
    pub residual: f64,
}

/// Least-squares fit of `value = prefactor · F^exponent` in log-log space.
pub fn power_law_fit(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::param("points", "need at least three points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::param("points", "all coordinates must be positive and finite"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::param("points", "need at least two distinct F values"));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(PowerLawFit {
        exponent: slope,
        prefactor: intercept.exp(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{expm_hermitian, x_polarized, SpinOperators};
    use num_complex::Complex64;

    fn spin(f: f64) -> Spin {
        Spin::new(f).unwrap()
    }

    #[test]
    fn baselines() {
        assert!((shotnoise_bound(50.0, 0.1, 1.0) - 1.0).abs() < 1e-12);
        assert!((shotnoise_bound(2.0, 1.0, 1.0) - 0.5).abs() < 1e-12);
        assert!((shotnoise_bound(3.0, 1.0, 1.0) / shotnoise_bound(12.0, 1.0, 1.0) - 2.0).abs() < 1e-12);
        assert!((heisenberg_bound(10.0, 0.1, 1.0, 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(kbody_bound(7.0, 0.3, 1.0, 1), heisenberg_bound(7.0, 0.3, 1.0, 1.0));
        assert!((kbody_bound(10.0, 0.1, 1.0, 2) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fit_examples() {
        let fit = power_law_fit(&[(1.0, 1.0), (10.0, 0.1), (100.0, 0.01)]).unwrap();
        assert!((fit.exponent + 1.0).abs() < 1e-12);
        assert!((fit.prefactor - 1.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        let flat = power_law_fit(&[(1.0, 3.0), (2.0, 3.0), (5.0, 3.0)]).unwrap();
        assert!(flat.exponent.abs() < 1e-12);
        assert!((flat.prefactor - 3.0).abs() < 1e-12);
        assert!(power_law_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(power_law_fit(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    /// Exact Larmor QFI from the derivative of `exp(iγBtF_y)|+x⟩`.
    fn larmor_qfi(f: f64, t: f64) -> f64 {
        let s = spin(f);
        let ops = SpinOperators::new(s);
        let psi = x_polarized(s).apply(&expm_hermitian(&ops.fy, 0.0)).unwrap();
        // ∂_B ψ = iγt F_y ψ at B = 0
        let dpsi = (&ops.fy * psi.amplitudes()) * Complex64::new(0.0, t);
        let overlap = psi.amplitudes().dotc(&dpsi);
        4.0 * (dpsi.norm_squared() - overlap.norm_sqr())
    }

    #[test]
    fn unitary_qfi_matches_oracle() {
        for f in [0.5, 1.0, 2.5, 5.0, 10.0] {
            let p = ModelParams::new(spin(f), 0.0, 0.0, 0.0);
            let sample = qfi_sample(&p, 5e-4, 1).unwrap();
            let exact = larmor_qfi(f, p.t_final);
            assert!((sample.qfi / exact - 1.0).abs() < 1e-2, "F = {f}");
            assert!((exact - 2.0 * f * 0.01).abs() < 1e-12);
            assert!((sample.bound - shotnoise_bound(f, 0.1, 1.0)).abs() / sample.bound < 1e-2);
        }
    }

    #[test]
    fn unitary_bound_decreases_with_f() {
        let p = ModelParams {
            t_final: 0.02,
            ..ModelParams::new(spin(1.0), 0.0, 0.0, 0.0)
        };
        let bounds: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&f| qfi_sample(&p.with_spin(spin(f)), 5e-4, 0).unwrap().bound)
            .collect();
        assert!(bounds[0] > bounds[1] && bounds[1] > bounds[2]);
    }

    #[test]
    fn step_halving_in_delta_b() {
        let p = ModelParams {
            t_final: 0.05,
            ..ModelParams::new(spin(10.0), 10.0, 0.0, 0.0)
        };
        let sweep = bound_sweep(&[p.spin], &p, 5e-4, 8, 100, 1).unwrap();
        let std = sweep.points[0].std_bound;
        let a = qfi_sample(&p, 5e-4, 100).unwrap().bound;
        let b = qfi_sample(&p, 2.5e-4, 100).unwrap().bound;
        assert!((a - b).abs() < std, "{a} vs {b}, std {std}");
    }

    #[test]
    fn qfi_ignores_global_phase() {
        let a = [0.6, 0.8, 0.0];
        let b = [0.5, 0.7, 0.1];
        let c = [0.4, 0.9, 0.2];
        let q = pure_state_qfi(&a, &b, &c, 0.1);
        let neg = |v: &[f64; 3]| v.map(|x| -x);
        assert!((pure_state_qfi(&neg(&a), &b, &neg(&c), 0.1) - q).abs() < 1e-14);
        assert!((pure_state_qfi(&a, &neg(&b), &c, 0.1) - q).abs() < 1e-14);
    }

    #[test]
    fn sweep_is_deterministic_and_worker_independent() {
        let p = ModelParams {
            t_final: 5e-3,
            ..ModelParams::new(spin(1.0), 10.0, 6e-4, 0.0)
        };
        let spins = [spin(2.0), spin(3.0)];
        let a = bound_sweep(&spins, &p, 5e-4, 3, 9, 1).unwrap();
        let b = bound_sweep(&spins, &p, 5e-4, 3, 9, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points[1].samples[2].seed, 1_000_011);
        assert!(a.points.iter().all(|pt| pt.std_bound >= 0.0 && pt.n_trajectories == 3));
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let p = ModelParams::new(spin(1.0), 10.0, 0.0, 0.0);
        assert!(bound_sweep(&[], &p, 5e-4, 3, 0, 1).is_err());
        assert!(bound_sweep(&[spin(1.0)], &p, 5e-4, 1, 0, 1).is_err());
        assert!(qfi_sample(&p, 0.0, 0).is_err());
    }

    #[test]
    fn failing_points_are_dropped() {
        // an absurd field overflows the first step of every trajectory
        let p = ModelParams {
            t_final: 1e-4,
            ..ModelParams::new(spin(3.0), 0.0, 0.0, 1e300)
        };
        let sweep = bound_sweep(&[p.spin], &p, 5e-4, 4, 0, 1).unwrap();
        assert!(sweep.points.is_empty());
        assert_eq!(sweep.dropped.len(), 1);
        assert_eq!(sweep.dropped[0].n_failed, 4);
    }
}
