//! Scalar abstraction shared by real- and complex-amplitude state vectors.
//!
//! Every generator of the double-pass filter is a real matrix in the `F_z`
//! eigenbasis (`F_z`, `F_x` and `iF_y` all have real entries), so states with
//! real amplitudes form an invariant set. The hot paths exploit that by
//! running on `f64` vectors; the public state types use `Complex64`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

pub trait Amplitude:
    Copy
    + Debug
    + Send
    + Sync
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    const ZERO: Self;

    fn from_real(x: f64) -> Self;
    fn conj(self) -> Self;
    fn norm_sqr(self) -> f64;
    fn re(self) -> f64;
    fn is_finite(self) -> bool;
    fn to_complex(self) -> Complex64;
}

impl Amplitude for f64 {
    const ZERO: Self = 0.0;

    #[inline]
    fn from_real(x: f64) -> Self {
        x
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn norm_sqr(self) -> f64 {
        self * self
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Amplitude for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);

    #[inline]
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
    #[inline]
    fn to_complex(self) -> Complex64 {
        self
    }
}

/// `Σ |x_k|²`.
pub fn norm_sqr<T: Amplitude>(x: &[T]) -> f64 {
    x.iter().map(|a| a.norm_sqr()).sum()
}

/// `⟨a|b⟩ = Σ conj(a_k) b_k`.
pub fn inner<T: Amplitude>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::ZERO, |acc, (&x, &y)| acc + x.conj() * y)
}

/// Rescales `x` to unit Euclidean norm. Returns the norm before rescaling.
pub fn normalize<T: Amplitude>(x: &mut [T]) -> f64 {
    let n = norm_sqr(x).sqrt();
    if n > 0.0 {
        let inv = 1.0 / n;
        for a in x.iter_mut() {
            *a = *a * inv;
        }
    }
    n
}
