//! Collective spin algebra in the `F_z` eigenbasis.
//!
//! Basis vectors are ordered by descending magnetic quantum number,
//! `m = F, F-1, …, -F`, so index `k` carries `m = F - k`. Dense
//! `Complex64` matrices are used for the public operator representations;
//! [`SpinLadder`] applies the same operators in `O(2F+1)` using their
//! tridiagonal structure.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amplitude::Amplitude;
use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Total spin quantum number `F`, stored as the integer `2F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Spin(u32);

impl Spin {
    /// Accepts any positive half-integer.
    pub fn new(f: f64) -> Result<Self> {
        let twice = 2.0 * f;
        if !f.is_finite() || f <= 0.0 || (twice - twice.round()).abs() > 1e-9 || twice > 1e6 {
            return Err(Error::InvalidSpin(f));
        }
        Ok(Spin(twice.round() as u32))
    }

    pub fn from_twice(twice: u32) -> Result<Self> {
        if twice == 0 {
            return Err(Error::InvalidSpin(0.0));
        }
        Ok(Spin(twice))
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    /// Hilbert-space dimension `2F + 1`.
    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }

    /// Magnetic quantum number of basis index `k`.
    pub fn m(self, k: usize) -> f64 {
        self.value() - k as f64
    }
}

impl TryFrom<f64> for Spin {
    type Error = Error;
    fn try_from(f: f64) -> Result<Self> {
        Spin::new(f)
    }
}

impl From<Spin> for f64 {
    fn from(s: Spin) -> f64 {
        s.value()
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

/// Tridiagonal application of `F_z`, `F_x`, `iF_y` and their products.
///
/// With `c_k = ⟨m_k|F_+|m_{k+1}⟩`, the operators are
/// `(F_x)_{k,k+1} = (F_x)_{k+1,k} = c_k/2` and
/// `(iF_y)_{k,k+1} = -(iF_y)_{k+1,k} = c_k/2`. All entries are real, which is
/// what lets the filters run on real amplitude vectors.
#[derive(Clone, Debug)]
pub struct SpinLadder {
    spin: Spin,
    m: Vec<f64>,
    half_c: Vec<f64>,
}

impl SpinLadder {
    pub fn new(spin: Spin) -> Self {
        let f = spin.value();
        let n = spin.dim();
        let m: Vec<f64> = (0..n).map(|k| spin.m(k)).collect();
        let half_c = (0..n.saturating_sub(1))
            .map(|k| {
                let lower = m[k + 1];
                0.5 * (f * (f + 1.0) - lower * (lower + 1.0)).sqrt()
            })
            .collect();
        SpinLadder { spin, m, half_c }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Diagonal of `F_z`.
    pub fn m_values(&self) -> &[f64] {
        &self.m
    }

    /// `out = F_z x`
    #[inline]
    pub fn apply_fz<T: Amplitude>(&self, x: &[T], out: &mut [T]) {
        for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(&self.m) {
            *o = xi * mi;
        }
    }

    /// `out = (iF_y) x`, a real antisymmetric operator.
    #[inline]
    pub fn apply_jy<T: Amplitude>(&self, x: &[T], out: &mut [T]) {
        let n = x.len();
        let c = &self.half_c;
        if n == 1 {
            out[0] = T::ZERO;
            return;
        }
        out[0] = x[1] * c[0];
        for k in 1..n - 1 {
            out[k] = x[k + 1] * c[k] - x[k - 1] * c[k - 1];
        }
        out[n - 1] = -(x[n - 2] * c[n - 2]);
    }

    /// `out = F_x x`
    #[inline]
    pub fn apply_fx<T: Amplitude>(&self, x: &[T], out: &mut [T]) {
        let n = x.len();
        let c = &self.half_c;
        if n == 1 {
            out[0] = T::ZERO;
            return;
        }
        out[0] = x[1] * c[0];
        for k in 1..n - 1 {
            out[k] = x[k + 1] * c[k] + x[k - 1] * c[k - 1];
        }
        out[n - 1] = x[n - 2] * c[n - 2];
    }

    /// Returns `(⟨F_z⟩, ⟨F_z²⟩)` of the normalised vector `x / |x|`.
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
        (first / norm, second / norm)
    }
}

/// Dense collective spin operators for a fixed `F`.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub spin: Spin,
    pub fx: DMatrix<Complex64>,
    pub fy: DMatrix<Complex64>,
    pub fz: DMatrix<Complex64>,
    /// `F_{+,x} = F_y + iF_z`
    pub fplus_x: DMatrix<Complex64>,
    /// `F_{-,x} = F_y - iF_z`
    pub fminus_x: DMatrix<Complex64>,
    ladder: SpinLadder,
}

impl SpinOperators {
    pub fn new(spin: Spin) -> Self {
        let ladder = SpinLadder::new(spin);
        let n = spin.dim();
        let mut fx = DMatrix::zeros(n, n);
        let mut fy = DMatrix::zeros(n, n);
        let mut fz = DMatrix::zeros(n, n);
        for k in 0..n {
            fz[(k, k)] = Complex64::new(ladder.m[k], 0.0);
        }
        for (k, &hc) in ladder.half_c.iter().enumerate() {
            fx[(k, k + 1)] = Complex64::new(hc, 0.0);
            fx[(k + 1, k)] = Complex64::new(hc, 0.0);
            fy[(k, k + 1)] = Complex64::new(0.0, -hc);
            fy[(k + 1, k)] = Complex64::new(0.0, hc);
        }
        let fplus_x = &fy + &fz * I;
        let fminus_x = &fy - &fz * I;
        SpinOperators {
            spin,
            fx,
            fy,
            fz,
            fplus_x,
            fminus_x,
            ladder,
        }
    }

    pub fn dim(&self) -> usize {
        self.spin.dim()
    }

    pub fn ladder(&self) -> &SpinLadder {
        &self.ladder
    }

    pub fn identity(&self) -> DMatrix<Complex64> {
        DMatrix::identity(self.dim(), self.dim())
    }

    /// `F_x² + F_y² + F_z²`
    pub fn casimir(&self) -> DMatrix<Complex64> {
        &self.fx * &self.fx + &self.fy * &self.fy + &self.fz * &self.fz
    }
}

/// Builds the spin operators for total spin `f` (any positive half-integer).
pub fn build_spin_operators(f: f64) -> Result<SpinOperators> {
    Ok(SpinOperators::new(Spin::new(f)?))
}

/// Normalised pure state, amplitudes in the descending `F_z` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    spin: Spin,
    amplitudes: DVector<Complex64>,
}

impl PureState {
    /// Normalises `amplitudes`; rejects the zero vector or a wrong length.
    pub fn new(spin: Spin, amplitudes: DVector<Complex64>) -> Result<Self> {
        if amplitudes.len() != spin.dim() {
            return Err(Error::DimensionMismatch {
                expected: spin.dim(),
                actual: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::param("amplitudes", "state vector must be finite and nonzero"));
        }
        Ok(PureState {
            spin,
            amplitudes: amplitudes / Complex64::new(norm, 0.0),
        })
    }

    pub fn from_slice<T: Amplitude>(spin: Spin, amplitudes: &[T]) -> Result<Self> {
        let v = DVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|a| a.to_complex()));
        PureState::new(spin, v)
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.amplitudes.as_slice()
    }

    /// Real parts of the amplitudes, or `None` if any imaginary part exceeds `tol`.
    pub fn real_amplitudes(&self, tol: f64) -> Option<Vec<f64>> {
        if self.amplitudes.iter().any(|a| a.im.abs() > tol) {
            return None;
        }
        Some(self.amplitudes.iter().map(|a| a.re).collect())
    }

    pub fn overlap(&self, other: &PureState) -> Complex64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// `sqrt(1 - |⟨a|b⟩|²)`, the trace distance between two pure states.
    /// Evaluated through the Lagrange identity so that nearly equal states
    /// keep full relative precision.
    pub fn trace_distance(&self, other: &PureState) -> f64 {
        let (a, b) = (&self.amplitudes, &other.amplitudes);
        let n = a.len().min(b.len());
        let mut sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += (a[i] * b[j] - a[j] * b[i]).norm_sqr();
            }
        }
        sum.sqrt()
    }

    pub fn apply(&self, op: &DMatrix<Complex64>) -> Result<PureState> {
        check_square(op, self.spin.dim())?;
        PureState::new(self.spin, op * &self.amplitudes)
    }

    pub fn to_density(&self) -> DensityOp {
        DensityOp {
            spin: self.spin,
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }

    /// `⟨ψ|op|ψ⟩`
    pub fn expectation(&self, op: &DMatrix<Complex64>) -> Result<Complex64> {
        check_square(op, self.spin.dim())?;
        Ok(self.amplitudes.dotc(&(op * &self.amplitudes)))
    }

    /// Variance of a Hermitian observable.
    pub fn variance(&self, op: &DMatrix<Complex64>) -> Result<f64> {
        let mean = self.expectation(op)?.re;
        let second = self.expectation(&(op * op))?.re;
        Ok(second - mean * mean)
    }
}

/// Density operator: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOp {
    spin: Spin,
    matrix: DMatrix<Complex64>,
}

impl DensityOp {
    /// Validates Hermiticity, unit trace and positivity to within `1e-8`.
    pub fn new(spin: Spin, matrix: DMatrix<Complex64>) -> Result<Self> {
        const TOL: f64 = 1e-8;
        check_square(&matrix, spin.dim())?;
        if (&matrix - matrix.adjoint()).camax() > TOL {
            return Err(Error::param("rho", "matrix is not Hermitian"));
        }
        if (matrix.trace().re - 1.0).abs() > TOL {
            return Err(Error::param("rho", "trace differs from 1"));
        }
        let rho = DensityOp { spin, matrix };
        if rho.min_eigenvalue() < -TOL {
            return Err(Error::param("rho", "matrix has a negative eigenvalue"));
        }
        Ok(rho)
    }

    /// Wraps `matrix` without validation. Callers guarantee the invariants.
    pub(crate) fn from_raw(spin: Spin, matrix: DMatrix<Complex64>) -> Self {
        DensityOp { spin, matrix }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// `Tr(op ρ)`
    pub fn expectation(&self, op: &DMatrix<Complex64>) -> Result<Complex64> {
        check_square(op, self.spin.dim())?;
        Ok((op * &self.matrix).trace())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// `Tr(ρ²)`
    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// `½ Σ |λ_i(ρ - σ)|`
    pub fn trace_distance(&self, other: &DensityOp) -> f64 {
        let diff = &self.matrix - &other.matrix;
        let herm = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
        0.5 * hermitian_eigenvalues(&herm).iter().map(|l| l.abs()).sum::<f64>()
    }
}

/// Common interface for `⟨ψ|op|ψ⟩` and `Tr(op ρ)`.
pub trait Expectation {
    fn expectation_of(&self, op: &DMatrix<Complex64>) -> Result<Complex64>;
}

impl Expectation for PureState {
    fn expectation_of(&self, op: &DMatrix<Complex64>) -> Result<Complex64> {
        self.expectation(op)
    }
}

impl Expectation for DensityOp {
    fn expectation_of(&self, op: &DMatrix<Complex64>) -> Result<Complex64> {
        self.expectation(op)
    }
}

/// Expectation of `op` in a pure or mixed state.
pub fn expectation<S: Expectation + ?Sized>(state: &S, op: &DMatrix<Complex64>) -> Result<Complex64> {
    state.expectation_of(op)
}

fn check_square(op: &DMatrix<Complex64>, dim: usize) -> Result<()> {
    if op.nrows() != dim || op.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: op.nrows().max(op.ncols()),
        });
    }
    Ok(())
}

fn hermitian_eigenvalues(h: &DMatrix<Complex64>) -> Vec<f64> {
    nalgebra::SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect()
}

/// `exp(-i·s·H)` for Hermitian `H`, through its eigendecomposition.
pub fn expm_hermitian(h: &DMatrix<Complex64>, s: f64) -> DMatrix<Complex64> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| Complex64::from_polar(1.0, -s * l)),
    ));
    v * phases * v.adjoint()
}

/// Spin coherent state `|θ,φ⟩`: the `+F` eigenstate of
/// `sinθ cosφ F_x + sinθ sinφ F_y + cosθ F_z`.
///
/// Amplitudes are `√C(2F, F+m) cos(θ/2)^{F+m} sin(θ/2)^{F-m} e^{-imφ}`, the
/// phase convention of `e^{-iφF_z} e^{-iθF_y}|F,F⟩`.
pub fn spin_coherent_state(spin: Spin, theta: f64, phi: f64) -> PureState {
    let amps = coherent_amplitudes(spin, theta, phi);
    PureState {
        spin,
        amplitudes: DVector::from_vec(amps),
    }
}

/// `|F, +F_x⟩`, the coherent state polarised along `+x`.
pub fn x_polarized(spin: Spin) -> PureState {
    spin_coherent_state(spin, PI / 2.0, 0.0)
}

/// Real amplitudes of `|F, +F_x⟩`.
pub fn x_polarized_real(spin: Spin) -> Vec<f64> {
    coherent_amplitudes(spin, PI / 2.0, 0.0)
        .into_iter()
        .map(|a| a.re)
        .collect()
}

fn coherent_amplitudes(spin: Spin, theta: f64, phi: f64) -> Vec<Complex64> {
    let n2 = spin.twice() as usize;
    let (s, c) = (0.5 * theta).sin_cos();
    let (ls, lc) = (s.abs().ln(), c.abs().ln());
    // ln C(2F, j) for j = 0..=2F
    let mut ln_binom = vec![0.0; n2 + 1];
    for j in 1..=n2 {
        ln_binom[j] = ln_binom[j - 1] + (((n2 - j + 1) as f64) / j as f64).ln();
    }
    (0..=n2)
        .map(|k| {
            // k = F - m, so F + m = 2F - k
            let up = n2 - k;
            let down = k;
            let mag = if (up > 0 && c == 0.0) || (down > 0 && s == 0.0) {
                0.0
            } else {
                let mut log = 0.5 * ln_binom[k];
                if up > 0 {
                    log += up as f64 * lc;
                }
                if down > 0 {
                    log += down as f64 * ls;
                }
                let sign = if (c < 0.0 && up % 2 == 1) ^ (s < 0.0 && down % 2 == 1) {
                    -1.0
                } else {
                    1.0
                };
                sign * log.exp()
            };
            let m = spin.m(k);
            Complex64::from_polar(mag, -m * phi)
        })
        .collect()
}

/// `exp(-iθF_y)`, the rotation about the y-axis.
pub fn rotation_y(ops: &SpinOperators, theta: f64) -> DMatrix<Complex64> {
    expm_hermitian(&ops.fy, theta)
}

/// One-axis-twisting squeezer `exp(-2iξ(F_zF_y + F_yF_z))`.
pub fn squeezing_operator(ops: &SpinOperators, xi: f64) -> DMatrix<Complex64> {
    let gen = &ops.fz * &ops.fy + &ops.fy * &ops.fz;
    expm_hermitian(&gen, 2.0 * xi)
}

/// Rotated squeezed state `Y_θ S_ξ |F,+F_x⟩`.
pub fn gaussian_state(ops: &SpinOperators, theta: f64, xi: f64) -> PureState {
    let s = squeezing_operator(ops, xi);
    let y = rotation_y(ops, theta);
    let base = x_polarized(ops.spin);
    PureState {
        spin: ops.spin,
        amplitudes: y * (s * base.amplitudes),
    }
}

/// Husimi function `Q(θ,φ) = |⟨θ,φ|ψ⟩|²` at each requested point.
pub fn q_function(state: &PureState, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::param("grid", "Q-function grid is empty"));
    }
    let spin = state.spin;
    Ok(points
        .iter()
        .map(|&(theta, phi)| {
            let coh = coherent_amplitudes(spin, theta, phi);
            coh.iter()
                .zip(state.amplitudes.iter())
                .fold(Complex64::new(0.0, 0.0), |acc, (c, a)| acc + c.conj() * a)
                .norm_sqr()
        })
        .collect())
}

/// Uniform `θ × φ` grid on the sphere with midpoint nodes in `θ`.
///
/// Node `(i, j)` sits at `θ_i = (i + ½)π/n_θ`, `φ_j = 2πj/n_φ`; values are
/// stored row-major (θ outer, φ inner).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QGrid {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl QGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::param("grid", "Q-function grid is empty"));
        }
        Ok(QGrid { n_theta, n_phi })
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * PI / self.n_theta as f64
    }

    pub fn phi(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_phi as f64
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        (0..self.n_theta)
            .flat_map(|i| (0..self.n_phi).map(move |j| (i, j)))
            .map(|(i, j)| (self.theta(i), self.phi(j)))
            .collect()
    }

    pub fn evaluate(&self, state: &PureState) -> Result<Vec<f64>> {
        q_function(state, &self.points())
    }

    /// `(2F+1)/(4π) ∫ Q dΩ` with `sinθ dθ dφ` quadrature weights.
    pub fn normalization(&self, spin: Spin, values: &[f64]) -> f64 {
        let dtheta = PI / self.n_theta as f64;
        let dphi = 2.0 * PI / self.n_phi as f64;
        let integral: f64 = (0..self.n_theta)
            .map(|i| {
                let row = &values[i * self.n_phi..(i + 1) * self.n_phi];
                self.theta(i).sin() * row.iter().sum::<f64>()
            })
            .sum::<f64>()
            * dtheta
            * dphi;
        integral * spin.dim() as f64 / (4.0 * PI)
    }

    /// Grid nodes that are maxima of their 8-neighbourhood (periodic in φ)
    /// and at least `rel_threshold` times the global maximum.
    pub fn local_maxima(&self, values: &[f64], rel_threshold: f64) -> Vec<(usize, usize)> {
        let global = values.iter().copied().fold(0.0, f64::max);
        let at = |i: usize, j: usize| values[i * self.n_phi + j];
        let mut peaks = Vec::new();
        for i in 0..self.n_theta {
            for j in 0..self.n_phi {
                let v = at(i, j);
                if v < rel_threshold * global || v <= 0.0 {
                    continue;
                }
                let mut is_peak = true;
                'nb: for di in [-1i64, 0, 1] {
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= self.n_theta as i64 {
                        continue;
                    }
                    for dj in [-1i64, 0, 1] {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let jj = (j as i64 + dj).rem_euclid(self.n_phi as i64) as usize;
                        let w = at(ii as usize, jj);
                        // ties broken towards the lower index so plateaus yield one peak
                        if w > v || (w == v && (ii as usize, jj) < (i, j)) {
                            is_peak = false;
                            break 'nb;
                        }
                    }
                }
                if is_peak {
                    peaks.push((i, j));
                }
            }
        }
        peaks
    }

    /// Chebyshev distance in grid cells, periodic in φ.
    pub fn cell_distance(&self, a: (usize, usize), b: (usize, usize)) -> usize {
        let di = a.0.abs_diff(b.0);
        let dj = a.1.abs_diff(b.1);
        di.max(dj.min(self.n_phi - dj))
    }

    /// Largest pairwise separation among significant local maxima.
    pub fn max_peak_separation(&self, values: &[f64], rel_threshold: f64) -> usize {
        let peaks = self.local_maxima(values, rel_threshold);
        let mut best = 0;
        for (a, &p) in peaks.iter().enumerate() {
            for &q in &peaks[a + 1..] {
                best = best.max(self.cell_distance(p, q));
            }
        }
        best
    }

    /// Writes `theta,phi,q` rows, row-major over the grid.
    pub fn write_csv<W: Write>(&self, mut out: W, values: &[f64]) -> Result<()> {
        writeln!(out, "theta,phi,q")?;
        for i in 0..self.n_theta {
            for j in 0..self.n_phi {
                writeln!(out, "{},{},{}", self.theta(i), self.phi(j), values[i * self.n_phi + j])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_dev(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn spins() -> impl Iterator<Item = Spin> {
        (1..=20).map(|t| Spin::from_twice(t).unwrap())
    }

    #[test]
    fn rejects_invalid_spin() {
        assert!(Spin::new(0.0).is_err());
        assert!(Spin::new(-1.0).is_err());
        assert!(Spin::new(0.3).is_err());
        assert!(Spin::new(f64::NAN).is_err());
        assert!(build_spin_operators(1.25).is_err());
        assert_eq!(Spin::new(1.5).unwrap().dim(), 4);
        assert_eq!(Spin::new(2.5).unwrap().to_string(), "5/2");
    }

    #[test]
    fn spin_half_is_pauli_over_two() {
        let ops = build_spin_operators(0.5).unwrap();
        let c = |re, im| Complex64::new(re, im);
        assert_eq!(ops.fz, DMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0., 0.), c(0., 0.), c(-0.5, 0.)]));
        let fy = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -0.5), c(0., 0.5), c(0., 0.)]);
        assert!(max_dev(&ops.fy, &fy) < 1e-15);
        let fx = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0.5, 0.), c(0.5, 0.), c(0., 0.)]);
        assert!(max_dev(&ops.fx, &fx) < 1e-15);
    }

    #[test]
    fn spin_one_fz_diagonal() {
        let ops = build_spin_operators(1.0).unwrap();
        let diag: Vec<f64> = (0..3).map(|k| ops.fz[(k, k)].re).collect();
        assert_eq!(diag, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn algebra_identities_hold_for_all_small_spins() {
        for spin in spins() {
            let ops = SpinOperators::new(spin);
            let f = spin.value();
            for op in [&ops.fx, &ops.fy, &ops.fz] {
                assert!(max_dev(op, &op.adjoint()) < 1e-12);
            }
            let comm = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>| a * b - b * a;
            assert!(max_dev(&comm(&ops.fx, &ops.fy), &(&ops.fz * I)) < 1e-10);
            assert!(max_dev(&comm(&ops.fy, &ops.fz), &(&ops.fx * I)) < 1e-10);
            assert!(max_dev(&comm(&ops.fz, &ops.fx), &(&ops.fy * I)) < 1e-10);
            let casimir = ops.identity() * Complex64::new(f * (f + 1.0), 0.0);
            assert!(max_dev(&ops.casimir(), &casimir) < 1e-10);
        }
    }

    #[test]
    fn casimir_spin_five() {
        let ops = build_spin_operators(5.0).unwrap();
        let expected = ops.identity() * Complex64::new(30.0, 0.0);
        assert!(max_dev(&ops.casimir(), &expected) < 1e-10);
    }

    #[test]
    fn ladder_matches_dense_operators() {
        let spin = Spin::new(3.5).unwrap();
        let ops = SpinOperators::new(spin);
        let x: Vec<Complex64> = (0..spin.dim())
            .map(|k| Complex64::new((k as f64 * 0.7).sin(), (k as f64 * 1.3).cos()))
            .collect();
        let xv = DVector::from_vec(x.clone());
        let mut out = vec![Complex64::new(0.0, 0.0); spin.dim()];
        let ladder = ops.ladder();
        ladder.apply_fz(&x, &mut out);
        assert!((DVector::from_vec(out.clone()) - &ops.fz * &xv).camax() < 1e-13);
        ladder.apply_fx(&x, &mut out);
        assert!((DVector::from_vec(out.clone()) - &ops.fx * &xv).camax() < 1e-13);
        ladder.apply_jy(&x, &mut out);
        assert!((DVector::from_vec(out.clone()) - (&ops.fy * &xv) * I).camax() < 1e-13);
    }

    #[test]
    fn plus_and_minus_ladders_about_x() {
        let ops = build_spin_operators(2.0).unwrap();
        // [F_x, F_{±,x}] = ±F_{±,x}
        let c = &ops.fx * &ops.fplus_x - &ops.fplus_x * &ops.fx;
        assert!(max_dev(&c, &ops.fplus_x) < 1e-12);
        let c = &ops.fx * &ops.fminus_x - &ops.fminus_x * &ops.fx;
        assert!(max_dev(&c, &(-&ops.fminus_x)) < 1e-12);
        // F_{-,x} annihilates |F, -F_x⟩
        let down = spin_coherent_state(ops.spin, PI / 2.0, PI);
        assert!((&ops.fminus_x * down.amplitudes()).norm() < 1e-12);
    }

    #[test]
    fn x_polarized_moments() {
        let spin = Spin::new(20.0).unwrap();
        let ops = SpinOperators::new(spin);
        let psi = x_polarized(spin);
        assert!((psi.expectation(&ops.fx).unwrap().re - 20.0).abs() < 1e-10);
        assert!(psi.expectation(&ops.fy).unwrap().norm() < 1e-10);
        assert!(psi.expectation(&ops.fz).unwrap().norm() < 1e-10);
        let fz2 = &ops.fz * &ops.fz;
        assert!((psi.expectation(&fz2).unwrap().re - 10.0).abs() < 1e-9);
        let rho = psi.to_density();
        assert!((expectation(&rho, &ops.fx).unwrap().re - 20.0).abs() < 1e-10);
    }

    #[test]
    fn coherent_state_at_north_pole() {
        let psi = spin_coherent_state(Spin::new(0.5).unwrap(), 0.0, 0.0);
        assert_eq!(psi.as_slice(), &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
    }

    #[test]
    fn coherent_state_is_top_eigenvector() {
        // oracle: dense Hermitian eigensolver on n·F
        for (f, theta, phi) in [(2.0, PI / 3.0, PI / 4.0), (4.5, 2.1, -0.7), (1.0, 3.0, 5.0)] {
            let spin = Spin::new(f).unwrap();
            let ops = SpinOperators::new(spin);
            let nf = &ops.fx * Complex64::new(theta.sin() * phi.cos(), 0.0)
                + &ops.fy * Complex64::new(theta.sin() * phi.sin(), 0.0)
                + &ops.fz * Complex64::new(theta.cos(), 0.0);
            let eig = nalgebra::SymmetricEigen::new(nf.clone());
            let (top, &lambda) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            assert!((lambda - f).abs() < 1e-10);
            let top_vec = eig.eigenvectors.column(top).into_owned();
            let psi = spin_coherent_state(spin, theta, phi);
            assert!((top_vec.dotc(psi.amplitudes()).norm() - 1.0).abs() < 1e-10);
            let residual = &nf * psi.amplitudes() - psi.amplitudes() * Complex64::new(f, 0.0);
            assert!(residual.norm() < 1e-10);
        }
    }

    #[test]
    fn rotation_identity_and_conjugation() {
        let ops = build_spin_operators(3.0).unwrap();
        assert!(max_dev(&rotation_y(&ops, 0.0), &ops.identity()) < 1e-12);
        let theta: f64 = 0.3;
        let y = rotation_y(&ops, theta);
        let (s, c) = theta.sin_cos();
        let cz = y.adjoint() * &ops.fz * &y;
        let expected = &ops.fz * Complex64::new(c, 0.0) - &ops.fx * Complex64::new(s, 0.0);
        assert!(max_dev(&cz, &expected) < 1e-10);
        let cx = y.adjoint() * &ops.fx * &y;
        let expected = &ops.fx * Complex64::new(c, 0.0) + &ops.fz * Complex64::new(s, 0.0);
        assert!(max_dev(&cx, &expected) < 1e-10);
        assert!(max_dev(&(y.adjoint() * &ops.fy * &y), &ops.fy) < 1e-10);
    }

    #[test]
    fn rotation_sign_convention() {
        // exp(-iπ/2 F_y) takes +x to -z: ⟨F_z⟩ = -F sinθ
        let ops = build_spin_operators(1.0).unwrap();
        let rotated = x_polarized(ops.spin).apply(&rotation_y(&ops, PI / 2.0)).unwrap();
        assert!((rotated.expectation(&ops.fz).unwrap().re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_composes_with_coherent_states() {
        for spin in spins() {
            let ops = SpinOperators::new(spin);
            let theta = 0.37;
            let rotated = x_polarized(spin).apply(&rotation_y(&ops, theta)).unwrap();
            // +x rotated about y by θ points at polar angle π/2 + θ, φ = 0
            let target = spin_coherent_state(spin, PI / 2.0 + theta, 0.0);
            assert!((rotated.overlap(&target).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn squeezing_is_unitary_and_squeezes_fz() {
        let ops = build_spin_operators(2.0).unwrap();
        assert!(max_dev(&squeezing_operator(&ops, 0.0), &ops.identity()) < 1e-12);
        let s = squeezing_operator(&ops, 0.01);
        assert!(max_dev(&(s.adjoint() * &s), &ops.identity()) < 1e-10);

        let ops = build_spin_operators(10.0).unwrap();
        let psi = x_polarized(ops.spin).apply(&squeezing_operator(&ops, 0.005)).unwrap();
        assert!(psi.variance(&ops.fz).unwrap() < 5.0 - 1e-3);
        assert!(psi.variance(&ops.fy).unwrap() > 5.0 + 1e-3);
    }

    #[test]
    fn unitarity_for_all_small_spins() {
        for spin in spins() {
            let ops = SpinOperators::new(spin);
            for u in [rotation_y(&ops, 1.234), squeezing_operator(&ops, 0.02)] {
                assert!(max_dev(&(u.adjoint() * &u), &ops.identity()) < 1e-10);
            }
        }
    }

    #[test]
    fn expectation_dimension_mismatch() {
        let psi = x_polarized(Spin::new(1.0).unwrap());
        let ops = build_spin_operators(2.0).unwrap();
        assert!(matches!(psi.expectation(&ops.fz), Err(Error::DimensionMismatch { .. })));
        assert!(psi.to_density().expectation(&ops.fz).is_err());
    }

    #[test]
    fn density_validation() {
        let spin = Spin::new(0.5).unwrap();
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(1.5, 0.0),
            Complex64::new(-0.5, 0.0),
        ]));
        assert!(DensityOp::new(spin, bad).is_err());
        let mixed = DMatrix::identity(2, 2) * Complex64::new(0.5, 0.0);
        let rho = DensityOp::new(spin, mixed).unwrap();
        assert!((rho.purity() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn q_function_self_overlap_and_normalization() {
        let spin = Spin::new(5.0).unwrap();
        let psi = spin_coherent_state(spin, 1.1, 2.3);
        let q = q_function(&psi, &[(1.1, 2.3)]).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-12);

        let grid = QGrid::new(100, 200).unwrap();
        let values = grid.evaluate(&psi).unwrap();
        assert!(values.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        assert!((grid.normalization(spin, &values) - 1.0).abs() < 1e-3);
        assert!(q_function(&psi, &[]).is_err());
        assert!(QGrid::new(0, 4).is_err());
    }

    #[test]
    fn q_function_peaks() {
        let spin = Spin::new(10.0).unwrap();
        let grid = QGrid::new(40, 80).unwrap();
        let single = grid.evaluate(&x_polarized(spin)).unwrap();
        assert_eq!(grid.local_maxima(&single, 0.01).len(), 1);

        // cat state along ±x has two well separated lobes
        let plus = x_polarized(spin);
        let minus = spin_coherent_state(spin, PI / 2.0, PI);
        let cat = PureState::new(spin, plus.amplitudes() + minus.amplitudes()).unwrap();
        let values = grid.evaluate(&cat).unwrap();
        assert!(grid.max_peak_separation(&values, 0.01) >= 30);
    }

    #[test]
    fn q_csv_layout() {
        let grid = QGrid::new(2, 3).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "theta,phi,q");
        assert_eq!(lines.len(), 7);
        assert!(lines[2].ends_with(",0.1"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn q_function_ignores_global_phase(twice in 1u32..16, phase in -3.0f64..3.0,
                                               theta in 0.0f64..3.1, phi in 0.0f64..6.2) {
                let spin = Spin::from_twice(twice).unwrap();
                let ops = SpinOperators::new(spin);
                let psi = x_polarized(spin).apply(&squeezing_operator(&ops, 0.03)).unwrap();
                let shifted = PureState::new(spin, psi.amplitudes() * Complex64::from_polar(1.0, phase)).unwrap();
                let a = q_function(&psi, &[(theta, phi)]).unwrap()[0];
                let b = q_function(&shifted, &[(theta, phi)]).unwrap()[0];
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
