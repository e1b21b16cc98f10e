//! Real and complex scalars behind one interface.
//!
//! Supremum norms are sampled on complex neighbourhoods while tabulation and
//! time stepping run on the reals, so everything numerical is generic over
//! [`Scalar`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use dashmap::DashMap;
use num_complex::Complex64 as C64;

use crate::jet::Jet;
use crate::error::Result;
use crate::sysmodel::{CacheKey, ChartCache};
use crate::sysmodel::{ErasedField, ErasedHamiltonian};

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
    + Add<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const IS_COMPLEX: bool;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    /// Complex numbers lose their imaginary part on the real line.
    fn from_c64(c: C64) -> Self;
    fn to_c64(self) -> C64;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn modulus(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn recip(self) -> Self {
        Self::one() / self
    }

    fn eval_field(f: &dyn ErasedField, w: &[Jet<Self>], z: &[Jet<Self>]) -> Result<(Vec<Jet<Self>>, Vec<Jet<Self>>)>;
    fn eval_ham(h: &dyn ErasedHamiltonian, w: &[Jet<Self>], z: &[Jet<Self>]) -> Result<Jet<Self>>;
    fn chart_cache(c: &ChartCache) -> &DashMap<CacheKey, Jet<Self>>;
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_c64(c: C64) -> Self {
        c.re
    }
    fn to_c64(self) -> C64 {
        C64::new(self, 0.0)
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn eval_field(f: &dyn ErasedField, w: &[Jet<Self>], z: &[Jet<Self>]) -> Result<(Vec<Jet<Self>>, Vec<Jet<Self>>)> {
        f.eval_real(w, z)
    }
    fn eval_ham(h: &dyn ErasedHamiltonian, w: &[Jet<Self>], z: &[Jet<Self>]) -> Result<Jet<Self>> {
        h.eval_real(w, z)
    }
    fn chart_cache(c: &ChartCache) -> &DashMap<CacheKey, Jet<Self>> {
        &c.real
    }
}

impl Scalar for C64 {
    const IS_COMPLEX: bool = true;

    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    fn one() -> Self {
        C64::new(1.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        C64::new(x, 0.0)
    }
    fn from_c64(c: C64) -> Self {
        c
    }
    fn to_c64(self) -> C64 {
        self
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn sin(self) -> Self {
        C64::sin(self)
    }
    fn cos(self) -> Self {
        C64::cos(self)
    }
    fn exp(self) -> Self {
        C64::exp(self)
    }
    fn sqrt(self) -> Self {
        C64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn eval_field(f: &dyn ErasedField, w: &[Jet<Self>], z: &[Jet<Self>]) -> Result<(Vec<Jet<Self>>, Vec<Jet<Self>>)> {
        f.eval_complex(w, z)
    }
    fn eval_ham(h: &dyn ErasedHamiltonian, w: &[Jet<Self>], z: &[Jet<Self>]) -> Result<Jet<Self>> {
        h.eval_complex(w, z)
    }
    fn chart_cache(c: &ChartCache) -> &DashMap<CacheKey, Jet<Self>> {
        &c.complex
    }
}

/// Euclidean norm of a vector of scalars.
pub fn norm2<S: Scalar>(v: &[S]) -> f64 {
    v.iter().map(|x| x.modulus().powi(2)).sum::<f64>().sqrt()
}
