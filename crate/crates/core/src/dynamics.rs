//! The double-pass quantum filter.
//!
//! With first-pass rate `M`, second-pass rate `K` and field `B` along `y`,
//! the Itô stochastic Schrödinger equation is
//!
//! ```text
//! d|ψ⟩ = [ iγB F_y − (M/2)(F_z − ⟨F_z⟩)² + i√(KM) F_y (F_z + ⟨F_z⟩) − (K/2) F_y² ] |ψ⟩ dt
//!        + [ √M (F_z − ⟨F_z⟩) + i√K F_y ] |ψ⟩ dW
//! ```
//!
//! and the adjoint (density-matrix) filter is
//!
//! ```text
//! dρ = iγB[F_y, ρ] dt + i√(KM)[F_y, {F_z, ρ}] dt + M 𝒟[F_z]ρ dt + K 𝒟[F_y]ρ dt
//!      + ( √M ℳ[F_z]ρ + i√K [F_y, ρ] ) dW,
//! ```
//!
//! both driven by the innovations `dW = dZ − 2√M ⟨F_z⟩ dt`. Setting `K = 0`
//! recovers the single-pass homodyne filter.

use std::io::{BufRead, Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amplitude::{self, Amplitude};
use crate::error::{Error, Result};
use crate::sde::{self, Interpretation, SdeSystem, Stepper};
use crate::spin::{self, DensityOp, PureState, Spin, SpinLadder, SpinOperators};

/// Physical and numerical parameters of one filter run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spin: Spin,
    /// First-pass measurement rate `M` (units of ν).
    pub m: f64,
    /// Second-pass rate `K` (units of ν).
    pub k: f64,
    /// Magnetic field `B` (units of ν/γ).
    pub b: f64,
    pub gamma: f64,
    pub dt: f64,
    pub t_final: f64,
}

impl ModelParams {
    /// `γ = 1`, `dt = 1e-5`, `t_final = 0.1`.
    pub fn new(spin: Spin, m: f64, k: f64, b: f64) -> Self {
        ModelParams {
            spin,
            m,
            k,
            b,
            gamma: 1.0,
            dt: 1e-5,
            t_final: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, v: f64, ok: bool| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("invalid value {v}")))
            }
        };
        check("M", self.m, self.m >= 0.0)?;
        check("K", self.k, self.k >= 0.0)?;
        check("B", self.b, true)?;
        check("gamma", self.gamma, true)?;
        check("dt", self.dt, self.dt > 0.0)?;
        check("t_final", self.t_final, self.t_final > 0.0)?;
        if self.n_steps() == 0 {
            return Err(Error::param("t_final", "shorter than one step"));
        }
        Ok(())
    }

    /// `round(t_final / dt)`
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn with_field(self, b: f64) -> Self {
        ModelParams { b, ..self }
    }

    pub fn with_spin(self, spin: Spin) -> Self {
        ModelParams { spin, ..self }
    }

    pub fn single_pass(self) -> Self {
        ModelParams { k: 0.0, ..self }
    }

    pub fn sqrt_m(&self) -> f64 {
        self.m.sqrt()
    }
}

/// `dW = dZ − 2√M ⟨F_z⟩ dt`
pub fn innovations(dz: f64, fz_expectation: f64, params: &ModelParams) -> f64 {
    dz - 2.0 * params.sqrt_m() * fz_expectation * params.dt
}

/// Precomputed banded coefficients of `F_z`, `iF_y`, `(iF_y)²` and `F_x` for
/// one spin size. Immutable and shareable across trajectory workers.
#[derive(Clone, Debug)]
pub struct SseKernel {
    spin: Spin,
    m: Vec<f64>,
    /// `c_k / 2`, padded with a trailing zero.
    hc: Vec<f64>,
    /// Diagonal of `(iF_y)²`.
    jy2_diag: Vec<f64>,
    /// Second super-diagonal of `(iF_y)²`, padded with two zeros.
    jy2_off: Vec<f64>,
}

impl SseKernel {
    pub fn new(spin: Spin) -> Self {
        let ladder = SpinLadder::new(spin);
        let n = spin.dim();
        let m = ladder.m_values().to_vec();
        let mut hc: Vec<f64> = (0..n.saturating_sub(1))
            .map(|k| {
                let f = spin.value();
                let lower = m[k + 1];
                0.5 * (f * (f + 1.0) - lower * (lower + 1.0)).sqrt()
            })
            .collect();
        hc.push(0.0);
        let at = |k: isize| if k < 0 { 0.0 } else { hc[k as usize] };
        let jy2_diag = (0..n as isize).map(|k| -(at(k).powi(2) + at(k - 1).powi(2))).collect();
        let jy2_off = (0..n as isize).map(|k| at(k) * hc.get(k as usize + 1).copied().unwrap_or(0.0)).collect();
        SseKernel {
            spin,
            m,
            hc,
            jy2_diag,
            jy2_off,
        }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// `(⟨F_z⟩, Var F_z)` of the normalised state.
    #[inline]
    pub fn fz_moments<T: Amplitude>(&self, x: &[T]) -> (f64, f64) {
        let mut norm = 0.0;
        let mut first = 0.0;
        let mut second = 0.0;
        for (&xi, &mi) in x.iter().zip(&self.m) {
            let p = xi.norm_sqr();
            norm += p;
            first += mi * p;
            second += mi * mi * p;
        }
        let z = first / norm;
        (z, second / norm - z * z)
    }

    #[inline]
    fn neighbours<T: Amplitude>(x: &[T], k: usize) -> (T, T) {
        let n = x.len();
        let up = if k + 1 < n { x[k + 1] } else { T::ZERO };
        let down = if k > 0 { x[k - 1] } else { T::ZERO };
        (up, down)
    }

    #[inline]
    fn hc_below(&self, k: usize) -> f64 {
        if k > 0 {
            self.hc[k - 1]
        } else {
            0.0
        }
    }

    /// `(iF_y x)_k`
    #[inline]
    fn jy_at<T: Amplitude>(&self, x: &[T], k: usize) -> T {
        let (up, down) = Self::neighbours(x, k);
        up * self.hc[k] - down * self.hc_below(k)
    }

    /// Itô drift of the SSE.
    pub fn ito_drift<T: Amplitude>(&self, rates: &Rates, x: &[T], out: &mut [T]) {
        let n = x.len();
        let (z, _) = self.fz_moments(x);
        let half_m = 0.5 * rates.m;
        let half_k = 0.5 * rates.k;
        for k in 0..n {
            let xk = x[k];
            let (up, down) = Self::neighbours(x, k);
            let hp = self.hc[k];
            let hm = self.hc_below(k);
            let mk = self.m[k];
            let v = up * hp - down * hm;
            // iF_y (F_z − z) x, with m_{k±1} = m_k ∓ 1
            let ju = up * (hp * (mk - 1.0 - z)) - down * (hm * (mk + 1.0 - z));
            let up2 = if k + 2 < n { x[k + 2] } else { T::ZERO };
            let down2 = if k >= 2 { x[k - 2] } else { T::ZERO };
            let off_down = if k >= 2 { self.jy2_off[k - 2] } else { 0.0 };
            let jv = up2 * self.jy2_off[k] + xk * self.jy2_diag[k] + down2 * off_down;
            let dz = mk - z;
            out[k] = v * rates.field - xk * (half_m * dz * dz)
                + (ju + v * (2.0 * z)) * rates.sqrt_km
                + jv * half_k;
        }
    }

    /// Explicit Stratonovich drift
    /// `[iγB F_y − M((F_z−⟨F_z⟩)² − ⟨ΔF_z²⟩) − (√(KM)/2)F_x + 2i√(KM)⟨F_z⟩F_y + i√(KM)⟨F_zF_y⟩] |ψ⟩`.
    pub fn stratonovich_drift<T: Amplitude>(&self, rates: &Rates, x: &[T], out: &mut [T]) {
        let n = x.len();
        let (z, var) = self.fz_moments(x);
        // ⟨F_z (iF_y)⟩ = i⟨F_z F_y⟩
        let mut norm = 0.0;
        let mut fz_jy = T::ZERO;
        for k in 0..n {
            norm += x[k].norm_sqr();
            fz_jy += x[k].conj() * self.jy_at(x, k) * self.m[k];
        }
        let fz_jy = fz_jy * (1.0 / norm);
        for k in 0..n {
            let xk = x[k];
            let (up, down) = Self::neighbours(x, k);
            let hp = self.hc[k];
            let hm = self.hc_below(k);
            let v = up * hp - down * hm;
            let fx = up * hp + down * hm;
            let dz = self.m[k] - z;
            out[k] = v * rates.field - xk * (rates.m * (dz * dz - var)) - fx * (0.5 * rates.sqrt_km)
                + v * (2.0 * rates.sqrt_km * z)
                + xk * fz_jy * rates.sqrt_km;
        }
    }

    /// `[√M (F_z − ⟨F_z⟩) + i√K F_y] |ψ⟩`
    pub fn diffusion<T: Amplitude>(&self, rates: &Rates, x: &[T], out: &mut [T]) {
        let (z, _) = self.fz_moments(x);
        for k in 0..x.len() {
            out[k] = x[k] * (rates.sqrt_m * (self.m[k] - z)) + self.jy_at(x, k) * rates.sqrt_k;
        }
    }
}

/// Rate constants in the form the kernels consume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    /// `γB`
    pub field: f64,
    pub m: f64,
    pub k: f64,
    pub sqrt_m: f64,
    pub sqrt_k: f64,
    pub sqrt_km: f64,
}

impl Rates {
    pub fn new(params: &ModelParams) -> Self {
        Rates::with_field(params, params.b)
    }

    pub fn with_field(params: &ModelParams, b: f64) -> Self {
        Rates {
            field: params.gamma * b,
            m: params.m,
            k: params.k,
            sqrt_m: params.m.sqrt(),
            sqrt_k: params.k.sqrt(),
            sqrt_km: (params.k * params.m).sqrt(),
        }
    }
}

/// Which calculus the SSE drift is written in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SseForm {
    Ito,
    Stratonovich,
}

/// The double-pass SSE as an [`SdeSystem`], renormalised after every step.
#[derive(Clone, Debug)]
pub struct SseSystem<'a, T> {
    kernel: &'a SseKernel,
    rates: Rates,
    form: SseForm,
    _scalar: std::marker::PhantomData<fn() -> T>,
}

impl<'a, T: Amplitude> SseSystem<'a, T> {
    pub fn new(kernel: &'a SseKernel, rates: Rates, form: SseForm) -> Self {
        SseSystem {
            kernel,
            rates,
            form,
            _scalar: std::marker::PhantomData,
        }
    }

    pub fn ito(kernel: &'a SseKernel, params: &ModelParams) -> Self {
        SseSystem::new(kernel, Rates::new(params), SseForm::Ito)
    }

    pub fn rates(&self) -> &Rates {
        &self.rates
    }
}

impl<T: Amplitude> SdeSystem for SseSystem<'_, T> {
    type Scalar = T;

    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn interpretation(&self) -> Interpretation {
        match self.form {
            SseForm::Ito => Interpretation::Ito,
            SseForm::Stratonovich => Interpretation::Stratonovich,
        }
    }

    fn drift(&self, _t: f64, x: &[T], out: &mut [T]) {
        match self.form {
            SseForm::Ito => self.kernel.ito_drift(&self.rates, x, out),
            SseForm::Stratonovich => self.kernel.stratonovich_drift(&self.rates, x, out),
        }
    }

    fn diffusion(&self, _t: f64, x: &[T], out: &mut [T]) {
        self.kernel.diffusion(&self.rates, x, out)
    }

    fn post_step(&self, x: &mut [T]) {
        amplitude::normalize(x);
    }
}

fn check_dim(state: &PureState, params: &ModelParams) -> Result<()> {
    if state.spin() != params.spin {
        return Err(Error::DimensionMismatch {
            expected: params.spin.dim(),
            actual: state.spin().dim(),
        });
    }
    Ok(())
}

/// One predictor-corrector step of the Itô SSE driven by the Wiener
/// increment `dw`, followed by renormalisation.
pub fn sse_ito_step(state: &PureState, params: &ModelParams, dw: f64) -> Result<PureState> {
    check_dim(state, params)?;
    let kernel = SseKernel::new(params.spin);
    let system = SseSystem::<Complex64>::ito(&kernel, params);
    let mut x = state.as_slice().to_vec();
    Stepper::new(x.len()).step(&system, 0.0, &mut x, dw, params.dt);
    sde::check_finite(&x, 0, params.dt)?;
    PureState::from_slice(params.spin, &x)
}

/// One step of the SSE filter driven by a photocurrent increment `dz`.
pub fn sse_filter_step(state: &PureState, params: &ModelParams, dz: f64) -> Result<PureState> {
    check_dim(state, params)?;
    let kernel = SseKernel::new(params.spin);
    let (z, _) = kernel.fz_moments(state.as_slice());
    sse_ito_step(state, params, innovations(dz, z, params))
}

/// The explicit Stratonovich drift vector at `state`.
pub fn sse_stratonovich_drift(state: &PureState, params: &ModelParams) -> Result<Vec<Complex64>> {
    check_dim(state, params)?;
    let kernel = SseKernel::new(params.spin);
    let mut out = vec![Complex64::new(0.0, 0.0); kernel.dim()];
    kernel.stratonovich_drift(&Rates::new(params), state.as_slice(), &mut out);
    Ok(out)
}

/// The Itô drift vector at `state`.
pub fn sse_ito_drift(state: &PureState, params: &ModelParams) -> Result<Vec<Complex64>> {
    check_dim(state, params)?;
    let kernel = SseKernel::new(params.spin);
    let mut out = vec![Complex64::new(0.0, 0.0); kernel.dim()];
    kernel.ito_drift(&Rates::new(params), state.as_slice(), &mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Adjoint filter

/// `𝒟[A]ρ = AρA† − ½A†Aρ − ½ρA†A`
pub fn dissipator(a: &DMatrix<Complex64>, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let ada = a.adjoint() * a;
    a * rho * a.adjoint() - (&ada * rho + rho * &ada) * Complex64::new(0.5, 0.0)
}

/// `ℳ[A]ρ = Aρ + ρA − 2Tr(Aρ)ρ`
pub fn measurement_superop(a: &DMatrix<Complex64>, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mean = (a * rho).trace();
    a * rho + rho * a - rho * (mean * 2.0)
}

fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a * b - b * a
}

fn anticommutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a * b + b * a
}

/// Drift and noise coefficients of the adjoint filter, evaluated term by term
/// from the superoperators.
pub fn adjoint_generator(
    ops: &SpinOperators,
    params: &ModelParams,
    rho: &DMatrix<Complex64>,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let i = Complex64::new(0.0, 1.0);
    let r = Rates::new(params);
    let drift = commutator(&ops.fy, rho) * (i * r.field)
        + commutator(&ops.fy, &anticommutator(&ops.fz, rho)) * (i * r.sqrt_km)
        + dissipator(&ops.fz, rho) * Complex64::new(r.m, 0.0)
        + dissipator(&ops.fy, rho) * Complex64::new(r.k, 0.0);
    let noise = measurement_superop(&ops.fz, rho) * Complex64::new(r.sqrt_m, 0.0)
        + commutator(&ops.fy, rho) * (i * r.sqrt_k);
    (drift, noise)
}

/// Operator pair `(A(z), B(z))` whose sandwich `Aρ + ρA† + BρB†` and
/// `Bρ + ρB†` reproduce the adjoint drift and noise at `z = Tr(F_z ρ)`.
pub fn sse_operators(
    ops: &SpinOperators,
    params: &ModelParams,
    z: f64,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let i = Complex64::new(0.0, 1.0);
    let r = Rates::new(params);
    let id = ops.identity();
    let zc = Complex64::new(z, 0.0);
    let shifted = &ops.fz - &id * zc;
    let a = &ops.fy * (i * r.field) - (&shifted * &shifted) * Complex64::new(0.5 * r.m, 0.0)
        + (&ops.fy * (&ops.fz + &id * zc)) * (i * r.sqrt_km)
        - (&ops.fy * &ops.fy) * Complex64::new(0.5 * r.k, 0.0);
    let b = &shifted * Complex64::new(r.sqrt_m, 0.0) + &ops.fy * (i * r.sqrt_k);
    (a, b)
}

/// Discretisation of the adjoint filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjointScheme {
    /// `ρ ↦ KρK† / Tr(KρK†)` with `K` the predictor-corrector propagator of
    /// the operator pair from [`sse_operators`]. Positivity preserving; on
    /// pure states it coincides with the SSE step.
    #[default]
    Kraus,
    /// Predictor-corrector on the superoperator form of [`adjoint_generator`].
    Superoperator,
}

/// Record-driven adjoint filter for one spin size.
#[derive(Clone, Debug)]
pub struct AdjointFilter {
    ops: SpinOperators,
    params: ModelParams,
    scheme: AdjointScheme,
}

impl AdjointFilter {
    pub fn new(params: ModelParams, scheme: AdjointScheme) -> Result<Self> {
        params.validate()?;
        Ok(AdjointFilter {
            ops: SpinOperators::new(params.spin),
            params,
            scheme,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn operators(&self) -> &SpinOperators {
        &self.ops
    }

    fn fz_mean(&self, rho: &DMatrix<Complex64>) -> f64 {
        (&self.ops.fz * rho).trace().re / rho.trace().re
    }

    /// Advances `rho` by one photocurrent increment.
    pub fn step(&self, rho: &DensityOp, dz: f64) -> Result<DensityOp> {
        if rho.spin() != self.params.spin {
            return Err(Error::DimensionMismatch {
                expected: self.params.spin.dim(),
                actual: rho.spin().dim(),
            });
        }
        let dt = self.params.dt;
        let r = rho.matrix();
        let z = self.fz_mean(r);
        let dw = innovations(dz, z, &self.params);
        let next = match self.scheme {
            AdjointScheme::Kraus => {
                let id = self.ops.identity();
                let (a0, b0) = sse_operators(&self.ops, &self.params, z);
                let dtc = Complex64::new(dt, 0.0);
                let k1 = &id + &a0 * dtc + &b0 * Complex64::new(dw, 0.0);
                let predicted = &k1 * r * k1.adjoint();
                let (a1, _) = sse_operators(&self.ops, &self.params, self.fz_mean(&predicted));
                let k = &id + (&a0 + &a1 * &k1) * Complex64::new(0.5 * dt, 0.0) + &b0 * Complex64::new(dw, 0.0);
                &k * r * k.adjoint()
            }
            AdjointScheme::Superoperator => {
                let (d0, n0) = adjoint_generator(&self.ops, &self.params, r);
                let predicted = r + &d0 * Complex64::new(dt, 0.0) + &n0 * Complex64::new(dw, 0.0);
                let (d1, _) = adjoint_generator(&self.ops, &self.params, &predicted);
                r + (d0 + d1) * Complex64::new(0.5 * dt, 0.0) + n0 * Complex64::new(dw, 0.0)
            }
        };
        let herm = (&next + next.adjoint()) * Complex64::new(0.5, 0.0);
        let tr = herm.trace().re;
        if !herm.iter().all(|v| v.is_finite()) || !(tr.is_finite() && tr > 0.0) {
            return Err(Error::NonFinite { step: 0, time: dt });
        }
        Ok(DensityOp::from_raw(self.params.spin, herm / Complex64::new(tr, 0.0)))
    }

    /// Like [`step`](Self::step), also returning the smallest eigenvalue of
    /// the result so callers can flag positivity loss.
    pub fn step_checked(&self, rho: &DensityOp, dz: f64) -> Result<(DensityOp, f64)> {
        let next = self.step(rho, dz)?;
        let min = next.min_eigenvalue();
        Ok((next, min))
    }
}

/// One step of the adjoint filter (Kraus scheme).
pub fn adjoint_filter_step(rho: &DensityOp, params: &ModelParams, dz: f64) -> Result<DensityOp> {
    AdjointFilter::new(*params, AdjointScheme::Kraus)?.step(rho, dz)
}

// ---------------------------------------------------------------------------
// Measurement records

/// Photocurrent increments `dZ_k` on the grid `t_k = k·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    /// Parameters used for generation, including the true field.
    pub params: ModelParams,
    pub seed: u64,
    pub dz: Vec<f64>,
}

const RECORD_MAGIC: &[u8; 8] = b"SPFREC01";

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.dz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dz.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dz.len()).map(move |k| k as f64 * self.params.dt)
    }

    /// Little-endian binary layout: magic `SPFREC01`, `2F` (u32), then
    /// `M, K, B, gamma, dt, t_final` (f64), `seed` (u64), `n` (u64) and `n`
    /// f64 increments.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.params;
        out.write_all(RECORD_MAGIC)?;
        out.write_all(&p.spin.twice().to_le_bytes())?;
        for v in [p.m, p.k, p.b, p.gamma, p.dt, p.t_final] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&(self.dz.len() as u64).to_le_bytes())?;
        for v in &self.dz {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != RECORD_MAGIC {
            return Err(Error::Record("not a measurement record (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let spin = Spin::from_twice(u32::from_le_bytes(b4))?;
        let mut b8 = [0u8; 8];
        let mut f = || -> Result<f64> {
            input.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let (m, k, b, gamma, dt, t_final) = (f()?, f()?, f()?, f()?, f()?, f()?);
        input.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut dz = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            input.read_exact(&mut b8)?;
            dz.push(f64::from_le_bytes(b8));
        }
        Ok(MeasurementRecord {
            params: ModelParams {
                spin,
                m,
                k,
                b,
                gamma,
                dt,
                t_final,
            },
            seed,
            dz,
        })
    }

    /// Header row `F,M,K,B,gamma,dt,t_final,seed`, one value row, a `dZ`
    /// column header and one increment per row. Values are written in
    /// shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.params;
        writeln!(out, "F,M,K,B,gamma,dt,t_final,seed")?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.spin.value(),
            p.m,
            p.k,
            p.b,
            p.gamma,
            p.dt,
            p.t_final,
            self.seed
        )?;
        writeln!(out, "dZ")?;
        for v in &self.dz {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Record(format!("missing {what}")))
        };
        let header = next("header")?;
        if header.trim() != "F,M,K,B,gamma,dt,t_final,seed" {
            return Err(Error::Record(format!("unexpected header `{header}`")));
        }
        let values = next("parameter row")?;
        let fields: Vec<&str> = values.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Record("parameter row must have 8 fields".into()));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Record(format!("bad number `{}`", fields[i])))
        };
        let params = ModelParams {
            spin: Spin::new(num(0)?)?,
            m: num(1)?,
            k: num(2)?,
            b: num(3)?,
            gamma: num(4)?,
            dt: num(5)?,
            t_final: num(6)?,
        };
        let seed = fields[7]
            .parse()
            .map_err(|_| Error::Record(format!("bad seed `{}`", fields[7])))?;
        if next("dZ header")?.trim() != "dZ" {
            return Err(Error::Record("expected `dZ` column header".into()));
        }
        let mut dz = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            dz.push(
                line.trim()
                    .parse()
                    .map_err(|_| Error::Record(format!("bad increment `{line}`")))?,
            );
        }
        Ok(MeasurementRecord { params, seed, dz })
    }
}

/// Output of a record-generating simulation.
#[derive(Clone, Debug)]
pub struct RecordSimulation {
    pub record: MeasurementRecord,
    /// `⟨F_z⟩` before each step, plus the final value.
    pub fz: Vec<f64>,
    pub final_state: PureState,
}

/// Integrates the SSE at the true field on `wiener_path(seed)` and emits
/// `dZ_k = dW_k + 2√M ⟨F_z⟩_k dt`.
pub fn simulate_record(params: &ModelParams, seed: u64) -> Result<RecordSimulation> {
    params.validate()?;
    let n = params.n_steps();
    let noise = sde::wiener_path(seed, n, params.dt)?;
    let kernel = SseKernel::new(params.spin);
    let system = SseSystem::<f64>::ito(&kernel, params);
    let mut x = spin::x_polarized_real(params.spin);
    let mut stepper = Stepper::new(x.len());
    let two_sqrt_m_dt = 2.0 * params.sqrt_m() * params.dt;
    let mut dz = Vec::with_capacity(n);
    let mut fz = Vec::with_capacity(n + 1);
    for (k, &dw) in noise.increments.iter().enumerate() {
        let (z, _) = kernel.fz_moments(&x);
        fz.push(z);
        dz.push(dw + two_sqrt_m_dt * z);
        let t = k as f64 * params.dt;
        stepper.step(&system, t, &mut x, dw, params.dt);
        sde::check_finite(&x, k, t + params.dt)?;
    }
    fz.push(kernel.fz_moments(&x).0);
    Ok(RecordSimulation {
        record: MeasurementRecord {
            params: *params,
            seed,
            dz,
        },
        fz,
        final_state: PureState::from_slice(params.spin, &x)?,
    })
}

/// Measurement record generated at `params.b`.
pub fn generate_record(params: &ModelParams, seed: u64) -> Result<MeasurementRecord> {
    Ok(simulate_record(params, seed)?.record)
}

/// Final SSE state after `params.n_steps()` steps on `wiener_path(seed)`,
/// starting from `|F,+F_x⟩`.
pub fn evolve_final_state(params: &ModelParams, seed: u64) -> Result<PureState> {
    Ok(simulate_record(params, seed)?.final_state)
}
