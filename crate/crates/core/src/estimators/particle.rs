//! Quantum particle filter.
//!
//! Each particle carries a weight `p_i`, a fixed field value `B_i` and a pure
//! state evolved with the SSE at `B_i`. All particles share the innovations
//! `dW = dZ − 2√M Σ_j p_j⟨F_z⟩_j dt`, and weights follow
//! `dp_i = 2√M (⟨F_z⟩_i − Σ_j p_j⟨F_z⟩_j) p_i dW`. There is no resampling.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{generate_record, MeasurementRecord, ModelParams, Rates, SseForm, SseKernel, SseSystem};
use crate::error::{Error, Result};
use crate::parallel;
use crate::sde::{self, Stepper};
use crate::spin::{self, PureState, Spin};
use crate::stats;

/// RNG stream used for the prior draw, distinct from the noise stream.
pub const PRIOR_STREAM: u64 = 1;

/// Which innovation drives each particle's quantum state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnovationMode {
    /// The ensemble innovation `dZ − 2√M Σ_j p_j⟨F_z⟩_j dt` for every particle.
    #[default]
    Shared,
    /// Each particle's own innovation `dZ − 2√M ⟨F_z⟩_i dt`, i.e. the exact
    /// conditional state given `B = B_i`.
    PerParticle,
}

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    kernel: SseKernel,
    weights: Vec<f64>,
    fields: Vec<f64>,
    /// Real amplitudes, particle-major.
    states: Vec<f64>,
    fz: Vec<f64>,
    mode: InnovationMode,
    clip_events: usize,
    steps: usize,
}

/// `n` particles with `B_i ~ Normal(prior_mean, prior_var)`, uniform weights
/// and every state `|F, +F_x⟩`.
pub fn init_ensemble(n: usize, prior_mean: f64, prior_var: f64, spin: Spin, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::param("n_particles", "must be at least 1"));
    }
    if !(prior_var > 0.0 && prior_var.is_finite()) || !prior_mean.is_finite() {
        return Err(Error::param("prior_var", format!("need a finite positive variance, got {prior_var}")));
    }
    let normal = Normal::new(prior_mean, prior_var.sqrt()).map_err(|e| Error::param("prior_var", e.to_string()))?;
    let mut rng = sde::seeded_rng(seed, PRIOR_STREAM);
    let fields: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Ok(ParticleEnsemble::from_fields(spin, fields))
}

impl ParticleEnsemble {
    /// Uniformly weighted particles at the given field values.
    pub fn from_fields(spin: Spin, fields: Vec<f64>) -> Self {
        let n = fields.len();
        let x = spin::x_polarized_real(spin);
        let kernel = SseKernel::new(spin);
        let z0 = kernel.fz_moments(&x).0;
        ParticleEnsemble {
            kernel,
            weights: vec![1.0 / n as f64; n],
            states: x.repeat(n),
            fz: vec![z0; n],
            fields,
            mode: InnovationMode::Shared,
            clip_events: 0,
            steps: 0,
        }
    }

    pub fn with_mode(mut self, mode: InnovationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> InnovationMode {
        self.mode
    }

    pub fn spin(&self) -> Spin {
        self.kernel.spin()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    /// `⟨F_z⟩` of every particle.
    pub fn fz(&self) -> &[f64] {
        &self.fz
    }

    pub fn state(&self, i: usize) -> PureState {
        let d = self.kernel.dim();
        PureState::from_slice(self.spin(), &self.states[i * d..(i + 1) * d]).expect("particle state has the ensemble dimension")
    }

    /// Number of weights clipped from negative to zero so far.
    pub fn clip_events(&self) -> usize {
        self.clip_events
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `Σ_i p_i ⟨F_z⟩_i`
    pub fn mean_fz(&self) -> f64 {
        self.weights.iter().zip(&self.fz).map(|(p, z)| p * z).sum()
    }

    /// Advances every particle by one record increment.
    pub fn step(&mut self, dz: f64, params: &ModelParams) -> Result<()> {
        if params.spin != self.spin() {
            return Err(Error::DimensionMismatch {
                expected: self.spin().dim(),
                actual: params.spin.dim(),
            });
        }
        let zbar = self.mean_fz();
        let dw = dz - 2.0 * params.sqrt_m() * zbar * params.dt;
        let gain = 2.0 * params.sqrt_m() * dw;
        let mut total = 0.0;
        for (p, z) in self.weights.iter_mut().zip(&self.fz) {
            *p *= 1.0 + gain * (z - zbar);
            if *p < 0.0 {
                *p = 0.0;
                self.clip_events += 1;
            }
            total += *p;
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::WeightsCollapsed { step: self.steps });
        }
        for p in &mut self.weights {
            *p /= total;
        }

        let d = self.kernel.dim();
        let t = self.steps as f64 * params.dt;
        let mut stepper = Stepper::new(d);
        for (i, x) in self.states.chunks_mut(d).enumerate() {
            let system = SseSystem::<f64>::new(&self.kernel, Rates::with_field(params, self.fields[i]), SseForm::Ito);
            let dw_i = match self.mode {
                InnovationMode::Shared => dw,
                InnovationMode::PerParticle => dz - 2.0 * params.sqrt_m() * self.fz[i] * params.dt,
            };
            stepper.step(&system, t, x, dw_i, params.dt);
            self.fz[i] = self.kernel.fz_moments(x).0;
            if !self.fz[i].is_finite() {
                return Err(Error::NonFinite {
                    step: self.steps,
                    time: t + params.dt,
                });
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Functional form of [`ParticleEnsemble::step`].
pub fn particle_step(mut ensemble: ParticleEnsemble, dz: f64, params: &ModelParams) -> Result<ParticleEnsemble> {
    ensemble.step(dz, params)?;
    Ok(ensemble)
}

/// Weighted mean and standard deviation of the particle fields.
pub fn estimate(ensemble: &ParticleEnsemble) -> (f64, f64) {
    let mean: f64 = ensemble.weights.iter().zip(&ensemble.fields).map(|(p, b)| p * b).sum();
    let var: f64 = ensemble
        .weights
        .iter()
        .zip(&ensemble.fields)
        .map(|(p, b)| p * (b - mean).powi(2))
        .sum();
    (mean, var.sqrt())
}

/// `1 / Σ_i p_i²`
pub fn effective_sample_size(ensemble: &ParticleEnsemble) -> f64 {
    1.0 / ensemble.weights.iter().map(|p| p * p).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub n_particles: usize,
    pub prior_mean: f64,
    pub prior_var: f64,
    /// Seed of the prior draw.
    pub seed: u64,
    pub mode: InnovationMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleTracePoint {
    pub t: f64,
    pub estimate: f64,
    pub uncertainty: f64,
    pub n_eff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleRun {
    pub trace: Vec<ParticleTracePoint>,
    pub estimate: f64,
    pub uncertainty: f64,
    pub n_eff: f64,
    pub clip_events: usize,
}

/// Filters `record` with its own model parameters, treating the field as
/// unknown. The trace holds `t = 0`, every `stride`-th step and the end.
pub fn run_particle_filter(record: &MeasurementRecord, config: &ParticleConfig, stride: usize) -> Result<ParticleRun> {
    let params = record.params;
    params.validate()?;
    let mut ens = init_ensemble(config.n_particles, config.prior_mean, config.prior_var, params.spin, config.seed)?.with_mode(config.mode);
    let stride = stride.max(1);
    let point = |ens: &ParticleEnsemble| {
        let (estimate, uncertainty) = estimate(ens);
        ParticleTracePoint {
            t: ens.steps as f64 * params.dt,
            estimate,
            uncertainty,
            n_eff: effective_sample_size(ens),
        }
    };
    let mut trace = vec![point(&ens)];
    for (k, &dz) in record.dz.iter().enumerate() {
        ens.step(dz, &params)?;
        if (k + 1) % stride == 0 || k + 1 == record.dz.len() {
            trace.push(point(&ens));
        }
    }
    let last = *trace.last().expect("trace has the initial point");
    Ok(ParticleRun {
        trace,
        estimate: last.estimate,
        uncertainty: last.uncertainty,
        n_eff: last.n_eff,
        clip_events: ens.clip_events,
    })
}

/// One filtered record of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub trajectory: usize,
    pub seed: u64,
    pub estimate: f64,
    pub uncertainty: f64,
    pub n_eff: f64,
    pub clip_events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSweepPoint {
    pub spin: Spin,
    /// Mean of the reported `ΔB̃_pf` over records.
    pub mean_uncertainty: f64,
    pub std_uncertainty: f64,
    /// Population deviation of the estimates from the true field.
    pub sample_deviation: f64,
    pub mean_estimate: f64,
    /// Mean `N_eff / N` at the final time.
    pub mean_neff_fraction: f64,
    pub clip_events: usize,
    pub n_failed: usize,
    pub runs: Vec<RecordResult>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleSweep {
    pub points: Vec<ParticleSweepPoint>,
    pub dropped: Vec<crate::fisher::DroppedPoint>,
}

impl ParticleSweep {
    pub fn point(&self, spin: Spin) -> Option<&ParticleSweepPoint> {
        self.points.iter().find(|p| p.spin == spin)
    }

    /// Power law through the mean reported uncertainties.
    pub fn fit(&self) -> Result<crate::fisher::PowerLawFit> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.spin.value(), p.mean_uncertainty)).collect();
        crate::fisher::power_law_fit(&pts)
    }
}

/// Filters `n_records` records per spin, each generated at `template.b` and
/// filtered with `config`. Record `i` at index `j` uses seed
/// `base_seed + j·10⁶ + i` for both the record noise and the prior draw, so
/// two sweeps on the same seeds see identical noise and particles.
pub fn particle_sweep(
    spins: &[Spin],
    template: &ModelParams,
    config: &ParticleConfig,
    n_records: usize,
    base_seed: u64,
    workers: usize,
) -> Result<ParticleSweep> {
    if spins.is_empty() {
        return Err(Error::param("F_list", "must not be empty"));
    }
    if n_records < 2 {
        return Err(Error::param("n_trajectories", "need at least two records"));
    }
    template.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spins.len()).flat_map(|j| (0..n_records).map(move |i| (j, i))).collect();
    let results = parallel::map_ordered(jobs, workers, |(j, i)| {
        let params = template.with_spin(spins[j]);
        let seed = parallel::trajectory_seed(base_seed, j, i);
        let record = generate_record(&params, seed)?;
        let run = run_particle_filter(&record, &ParticleConfig { seed, ..*config }, usize::MAX)?;
        Ok::<_, Error>(RecordResult {
            trajectory: i,
            seed,
            estimate: run.estimate,
            uncertainty: run.uncertainty,
            n_eff: run.n_eff,
            clip_events: run.clip_events,
        })
    })?;
    let mut sweep = ParticleSweep::default();
    for (j, chunk) in results.chunks(n_records).enumerate() {
        let mut runs = Vec::with_capacity(n_records);
        let mut failures = Vec::new();
        for r in chunk {
            match r {
                Ok(run) => runs.push(*run),
                Err(e) => failures.push(e.to_string()),
            }
        }
        if failures.len() as f64 > crate::fisher::MAX_FAILURE_FRACTION * n_records as f64 || runs.len() < 2 {
            sweep.dropped.push(crate::fisher::DroppedPoint {
                spin: spins[j],
                n_failed: failures.len(),
                first_error: failures.into_iter().next().unwrap_or_default(),
            });
            continue;
        }
        let unc: Vec<f64> = runs.iter().map(|r| r.uncertainty).collect();
        let est: Vec<f64> = runs.iter().map(|r| r.estimate).collect();
        let neff: Vec<f64> = runs.iter().map(|r| r.n_eff / config.n_particles as f64).collect();
        sweep.points.push(ParticleSweepPoint {
            spin: spins[j],
            mean_uncertainty: stats::mean(&unc),
            std_uncertainty: stats::population_std(&unc),
            sample_deviation: stats::sample_deviation(&est, template.b)?,
            mean_estimate: stats::mean(&est),
            mean_neff_fraction: stats::mean(&neff),
            clip_events: runs.iter().map(|r| r.clip_events).sum(),
            n_failed: failures.len(),
            runs,
        });
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::sse_filter_step;

    fn spin(f: f64) -> Spin {
        Spin::new(f).unwrap()
    }

    #[test]
    fn init_checks_and_draws() {
        assert!(init_ensemble(0, 0.0, 1.0, spin(1.0), 0).is_err());
        assert!(init_ensemble(5, 0.0, 0.0, spin(1.0), 0).is_err());
        let ens = init_ensemble(1000, 0.0, 10.0, spin(2.0), 4).unwrap();
        let mean = ens.fields().iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 4.0 * (10.0f64 / 1000.0).sqrt());
        assert!(ens.weights().iter().all(|&w| w == 1e-3));
        assert_eq!(effective_sample_size(&ens).round(), 1000.0);
        let x = spin::x_polarized(spin(2.0));
        assert!(ens.state(17).trace_distance(&x) < 1e-14);
        let one = init_ensemble(1, 0.0, 10.0, spin(2.0), 4).unwrap();
        assert_eq!(one.weights(), &[1.0]);
    }

    #[test]
    fn estimate_examples() {
        let ens = ParticleEnsemble::from_fields(spin(1.0), vec![-1.0, 1.0]);
        assert_eq!(estimate(&ens), (0.0, 1.0));
        let ens = ParticleEnsemble::from_fields(spin(1.0), vec![0.7]);
        assert_eq!(estimate(&ens), (0.7, 0.0));
        let mut ens = ParticleEnsemble::from_fields(spin(1.0), vec![0.1, 0.2, 0.3]);
        ens.weights = vec![0.0, 1.0, 0.0];
        assert_eq!(estimate(&ens), (0.2, 0.0));
        assert_eq!(effective_sample_size(&ens), 1.0);
    }

    #[test]
    fn single_particle_follows_plain_filter() {
        let p = ModelParams {
            t_final: 2e-3,
            ..ModelParams::new(spin(3.0), 10.0, 6e-4, 0.4)
        };
        let record = generate_record(&p.with_field(0.0), 6).unwrap();
        let mut ens = ParticleEnsemble::from_fields(p.spin, vec![0.4]);
        let mut psi = spin::x_polarized(p.spin);
        for &dz in &record.dz {
            ens.step(dz, &p).unwrap();
            psi = sse_filter_step(&psi, &p, dz).unwrap();
            assert_eq!(ens.weights(), &[1.0]);
        }
        assert!(ens.state(0).trace_distance(&psi) < 1e-10);
    }

    #[test]
    fn no_measurement_freezes_weights() {
        let p = ModelParams {
            t_final: 1e-3,
            ..ModelParams::new(spin(2.0), 0.0, 0.0, 0.0)
        };
        let mut ens = init_ensemble(10, 0.0, 10.0, p.spin, 1).unwrap();
        let noise = sde::wiener_path(3, p.n_steps(), p.dt).unwrap();
        for &dz in &noise.increments {
            ens.step(dz, &p).unwrap();
        }
        assert!(ens.weights().iter().all(|&w| (w - 0.1).abs() < 1e-15));
    }

    #[test]
    fn identical_particles_reduce_to_one() {
        let p = ModelParams {
            t_final: 1e-3,
            ..ModelParams::new(spin(2.0), 10.0, 6e-4, 0.0)
        };
        let record = generate_record(&p, 2).unwrap();
        let mut ens = ParticleEnsemble::from_fields(p.spin, vec![0.3; 5]);
        for &dz in &record.dz {
            ens.step(dz, &p).unwrap();
        }
        assert!(ens.weights().iter().all(|&w| (w - 0.2).abs() < 1e-15));
        let (b, db) = estimate(&ens);
        assert!((b - 0.3).abs() < 1e-15 && db < 1e-7);
        for i in 1..5 {
            assert_eq!(ens.state(i), ens.state(0));
        }
    }

    #[test]
    fn weights_stay_normalised() {
        let p = ModelParams {
            t_final: 5e-3,
            ..ModelParams::new(spin(4.0), 10.0, 6e-4, 0.0)
        };
        let record = generate_record(&p, 9).unwrap();
        let mut ens = init_ensemble(30, 0.0, 10.0, p.spin, 9).unwrap();
        for &dz in &record.dz {
            ens.step(dz, &p).unwrap();
            let sum: f64 = ens.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(ens.weights().iter().all(|&w| w >= 0.0));
            let neff = effective_sample_size(&ens);
            assert!((1.0 - 1e-9..=30.0 + 1e-9).contains(&neff));
        }
    }

    #[test]
    fn spin_mismatch_is_rejected() {
        let mut ens = init_ensemble(3, 0.0, 1.0, spin(1.0), 0).unwrap();
        let p = ModelParams::new(spin(2.0), 1.0, 0.0, 0.0);
        assert!(ens.step(0.0, &p).is_err());
    }

    #[test]
    fn run_trace_layout() {
        let p = ModelParams {
            t_final: 1e-3,
            ..ModelParams::new(spin(2.0), 10.0, 0.0, 0.0)
        };
        let record = generate_record(&p, 1).unwrap();
        let cfg = ParticleConfig {
            n_particles: 8,
            prior_mean: 0.0,
            prior_var: 10.0,
            seed: 1,
            mode: InnovationMode::Shared,
        };
        let run = run_particle_filter(&record, &cfg, 30).unwrap();
        assert_eq!(run.trace.len(), 1 + 3 + 1);
        assert_eq!(run.trace[0].t, 0.0);
        assert!((run.trace.last().unwrap().t - 1e-3).abs() < 1e-15);
        assert_eq!(run.estimate, run.trace.last().unwrap().estimate);
    }

    #[test]
    fn sweep_is_worker_independent_and_attributable() {
        let p = ModelParams {
            t_final: 2e-3,
            ..ModelParams::new(spin(2.0), 10.0, 6e-4, 0.0)
        };
        let cfg = ParticleConfig {
            n_particles: 6,
            prior_mean: 0.0,
            prior_var: 10.0,
            seed: 0,
            mode: InnovationMode::Shared,
        };
        let spins = [spin(1.0), spin(2.0)];
        let a = particle_sweep(&spins, &p, &cfg, 3, 40, 1).unwrap();
        let b = particle_sweep(&spins, &p, &cfg, 3, 40, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points[1].runs[2].seed, 1_000_042);
        assert!(particle_sweep(&spins, &p, &cfg, 1, 0, 1).is_err());
    }
}
