//! Seeded Wiener increments and a predictor-corrector integrator for scalar-
//! noise SDE systems.
//!
//! # Noise generation
//!
//! [`wiener_path`] seeds a ChaCha8 stream cipher (a counter-based generator)
//! with `ChaCha8Rng::seed_from_u64(seed)` on stream 0 and draws standard
//! normals with `rand_distr::StandardNormal` (ziggurat). Each increment is the
//! normal deviate times `sqrt(dt)`. Both algorithms are portable and value
//! stable, so `(seed, n_steps, dt)` reproduces a path bit-for-bit on every
//! platform.
//!
//! # Integration scheme
//!
//! One step from `(t, x)` with increment `ΔW`:
//!
//! ```text
//! predictor:  x̄  = x + a(t, x) Δt + b(t, x) ΔW
//! corrector:  x' = x + ½[a(t, x) + a(t+Δt, x̄)] Δt + b* ΔW
//! ```
//!
//! with `b* = b(t, x)` for Itô systems and `b* = ½[b(t, x) + b(t+Δt, x̄)]`
//! for Stratonovich systems (Heun). The optional post-step projection runs
//! after the corrector.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::amplitude::Amplitude;
use crate::error::{Error, Result};

/// Stream of the ChaCha generator reserved for Wiener increments.
pub const NOISE_STREAM: u64 = 0;

/// Fresh generator for `(seed, stream)`. Distinct streams of one seed are
/// independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub seed: u64,
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Same Brownian path sampled `factor` times more coarsely.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || !self.len().is_multiple_of(factor) {
            return Err(Error::param(
                "factor",
                format!("{factor} does not divide a path of {} steps", self.len()),
            ));
        }
        Ok(NoisePath {
            seed: self.seed,
            dt: self.dt * factor as f64,
            increments: self.increments.chunks(factor).map(|c| c.iter().sum()).collect(),
        })
    }
}

/// Gaussian increments `ΔW_k ~ Normal(0, dt)`.
pub fn wiener_path(seed: u64, n_steps: usize, dt: f64) -> Result<NoisePath> {
    if n_steps == 0 {
        return Err(Error::param("n_steps", "must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be positive and finite"));
    }
    let mut rng = seeded_rng(seed, NOISE_STREAM);
    let scale = dt.sqrt();
    let increments = (0..n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    Ok(NoisePath {
        seed,
        dt,
        increments,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpretation {
    Ito,
    Stratonovich,
}

/// `dx = a(t, x) dt + b(t, x) dW` with a single scalar Wiener process.
pub trait SdeSystem: Sync {
    type Scalar: Amplitude;

    fn dim(&self) -> usize;

    fn interpretation(&self) -> Interpretation;

    fn drift(&self, t: f64, x: &[Self::Scalar], out: &mut [Self::Scalar]);

    fn diffusion(&self, t: f64, x: &[Self::Scalar], out: &mut [Self::Scalar]);

    /// Projection applied after every corrector (e.g. renormalisation).
    fn post_step(&self, _x: &mut [Self::Scalar]) {}
}

/// Closure-backed system, mostly for scalar test problems.
pub struct FnSystem<T, A, B> {
    pub dim: usize,
    pub interpretation: Interpretation,
    pub drift: A,
    pub diffusion: B,
    _scalar: std::marker::PhantomData<fn() -> T>,
}

impl<T, A, B> FnSystem<T, A, B>
where
    T: Amplitude,
    A: Fn(f64, &[T], &mut [T]) + Sync,
    B: Fn(f64, &[T], &mut [T]) + Sync,
{
    pub fn new(dim: usize, interpretation: Interpretation, drift: A, diffusion: B) -> Self {
        FnSystem {
            dim,
            interpretation,
            drift,
            diffusion,
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<T, A, B> SdeSystem for FnSystem<T, A, B>
where
    T: Amplitude,
    A: Fn(f64, &[T], &mut [T]) + Sync,
    B: Fn(f64, &[T], &mut [T]) + Sync,
{
    type Scalar = T;

    fn dim(&self) -> usize {
        self.dim
    }

    fn interpretation(&self) -> Interpretation {
        self.interpretation
    }

    fn drift(&self, t: f64, x: &[T], out: &mut [T]) {
        (self.drift)(t, x, out)
    }

    fn diffusion(&self, t: f64, x: &[T], out: &mut [T]) {
        (self.diffusion)(t, x, out)
    }
}

/// Scratch buffers for repeated steps of one system.
#[derive(Clone, Debug)]
pub struct Stepper<T> {
    a0: Vec<T>,
    a1: Vec<T>,
    b0: Vec<T>,
    b1: Vec<T>,
    pred: Vec<T>,
}

impl<T: Amplitude> Stepper<T> {
    pub fn new(dim: usize) -> Self {
        Stepper {
            a0: vec![T::ZERO; dim],
            a1: vec![T::ZERO; dim],
            b0: vec![T::ZERO; dim],
            b1: vec![T::ZERO; dim],
            pred: vec![T::ZERO; dim],
        }
    }

    /// Advances `x` in place from `t` to `t + dt` with increment `dw`.
    #[allow(clippy::needless_range_loop)]
    pub fn step<S>(&mut self, system: &S, t: f64, x: &mut [T], dw: f64, dt: f64)
    where
        S: SdeSystem<Scalar = T> + ?Sized,
    {
        system.drift(t, x, &mut self.a0);
        system.diffusion(t, x, &mut self.b0);
        for k in 0..x.len() {
            self.pred[k] = x[k] + self.a0[k] * dt + self.b0[k] * dw;
        }
        let t1 = t + dt;
        system.drift(t1, &self.pred, &mut self.a1);
        match system.interpretation() {
            Interpretation::Ito => {
                for k in 0..x.len() {
                    x[k] += (self.a0[k] + self.a1[k]) * (0.5 * dt) + self.b0[k] * dw;
                }
            }
            Interpretation::Stratonovich => {
                system.diffusion(t1, &self.pred, &mut self.b1);
                for k in 0..x.len() {
                    x[k] += (self.a0[k] + self.a1[k]) * (0.5 * dt) + (self.b0[k] + self.b1[k]) * (0.5 * dw);
                }
            }
        }
        system.post_step(x);
    }
}

pub(crate) fn check_finite<T: Amplitude>(x: &[T], step: usize, time: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step, time })
    }
}

/// Sampled solution: `states[i]` is the state at `times[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<T>>,
}

impl<T: Amplitude> Trajectory<T> {
    pub fn last(&self) -> &[T] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// CSV with a `t` column, then each component as a `re_k,im_k` pair.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.states.first().map_or(0, Vec::len);
        write!(out, "t")?;
        for k in 0..dim {
            write!(out, ",re_{k},im_{k}")?;
        }
        writeln!(out)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t}")?;
            for v in x {
                let c = v.to_complex();
                write!(out, ",{},{}", c.re, c.im)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Integrates `system` from `initial` over every increment of `noise`,
/// recording the state every `stride` steps (and always the final state).
pub fn integrate<S: SdeSystem + ?Sized>(
    system: &S,
    initial: &[S::Scalar],
    noise: &NoisePath,
    stride: usize,
) -> Result<Trajectory<S::Scalar>> {
    if initial.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            actual: initial.len(),
        });
    }
    let stride = stride.max(1);
    let dt = noise.dt;
    let mut stepper = Stepper::new(initial.len());
    let mut x = initial.to_vec();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
    };
    let n = noise.len();
    for (k, &dw) in noise.increments.iter().enumerate() {
        let t = k as f64 * dt;
        stepper.step(system, t, &mut x, dw, dt);
        check_finite(&x, k, t + dt)?;
        if (k + 1) % stride == 0 || k + 1 == n {
            traj.times.push((k + 1) as f64 * dt);
            traj.states.push(x.clone());
        }
    }
    Ok(traj)
}

/// Integrates several systems on one shared noise path.
pub fn coevolve<S: SdeSystem>(
    systems: &[S],
    initials: &[Vec<S::Scalar>],
    noise: &NoisePath,
    stride: usize,
) -> Result<Vec<Trajectory<S::Scalar>>> {
    if systems.len() != initials.len() {
        return Err(Error::DimensionMismatch {
            expected: systems.len(),
            actual: initials.len(),
        });
    }
    systems
        .iter()
        .zip(initials)
        .map(|(s, x0)| integrate(s, x0, noise, stride))
        .collect()
}

/// Stratonovich drift `ā^j = a^j - ½ Σ_k b^k ∂b^j/∂x^k`.
///
/// The sum is the directional derivative of `b` along `b` itself (over the
/// real coordinates of complex components), evaluated by a Richardson-
/// extrapolated central difference, which is exact for diffusions that are
/// polynomials of degree ≤ 4 along the line.
pub fn ito_to_stratonovich_drift<S: SdeSystem + ?Sized>(
    system: &S,
    t: f64,
    x: &[S::Scalar],
) -> Result<Vec<S::Scalar>> {
    let n = x.len();
    let mut a = vec![S::Scalar::ZERO; n];
    let mut b = vec![S::Scalar::ZERO; n];
    system.drift(t, x, &mut a);
    system.diffusion(t, x, &mut b);
    let b_norm = crate::amplitude::norm_sqr(&b).sqrt();
    if b_norm == 0.0 {
        return Ok(a);
    }
    let x_norm = crate::amplitude::norm_sqr(x).sqrt().max(1.0);
    let h = 1e-4 * x_norm / b_norm;
    if !(h.is_finite() && h * b_norm > f64::EPSILON * x_norm) {
        return Err(Error::JacobianUnderflow { norm: b_norm });
    }
    let mut plus = vec![S::Scalar::ZERO; n];
    let mut minus = vec![S::Scalar::ZERO; n];
    let mut shifted = vec![S::Scalar::ZERO; n];
    let mut central = |step: f64| -> Vec<S::Scalar> {
        for k in 0..n {
            shifted[k] = x[k] + b[k] * step;
        }
        system.diffusion(t, &shifted, &mut plus);
        for k in 0..n {
            shifted[k] = x[k] - b[k] * step;
        }
        system.diffusion(t, &shifted, &mut minus);
        (0..n).map(|k| (plus[k] - minus[k]) * (0.5 / step)).collect()
    };
    let coarse = central(h);
    let fine = central(0.5 * h);
    for k in 0..n {
        let jb = (fine[k] * 4.0 - coarse[k]) * (1.0 / 3.0);
        a[k] -= jb * 0.5;
    }
    Ok(a)
}

/// Stratonovich counterpart of an Itô system, with the drift corrected by
/// [`ito_to_stratonovich_drift`] at every evaluation.
pub struct StratonovichForm<'a, S: ?Sized> {
    inner: &'a S,
}

impl<'a, S: SdeSystem + ?Sized> StratonovichForm<'a, S> {
    pub fn new(inner: &'a S) -> Result<Self> {
        if inner.interpretation() != Interpretation::Ito {
            return Err(Error::param("interpretation", "inner system must be Itô"));
        }
        Ok(StratonovichForm { inner })
    }
}

impl<S: SdeSystem + ?Sized> SdeSystem for StratonovichForm<'_, S> {
    type Scalar = S::Scalar;

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn interpretation(&self) -> Interpretation {
        Interpretation::Stratonovich
    }

    fn drift(&self, t: f64, x: &[S::Scalar], out: &mut [S::Scalar]) {
        match ito_to_stratonovich_drift(self.inner, t, x) {
            Ok(a) => out.copy_from_slice(&a),
            // surfaces as a non-finite state in the integrator
            Err(_) => out.iter_mut().for_each(|v| *v = S::Scalar::from_real(f64::NAN)),
        }
    }

    fn diffusion(&self, t: f64, x: &[S::Scalar], out: &mut [S::Scalar]) {
        self.inner.diffusion(t, x, out)
    }

    fn post_step(&self, x: &mut [S::Scalar]) {
        self.inner.post_step(x)
    }
}
