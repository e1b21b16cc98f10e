//! Periodic orbits on a two-dimensional slow manifold.
//!
//! After reduction to an energy level `E`, the fast variables obey
//! `ε ∂_ψ z = J (A(ψ) z + μ F(ψ, z))` with `ψ ∈ [0, T]`, `T = 2π / ∂_I h`.
//! The monodromy matrix of the linear part decides which energies keep
//! their periodic orbit: those with every multiplier at distance `≥ √μ`
//! from 1.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::mat_vec;
use crate::ode;

/// Frequencies below this are treated as degenerate.
pub const MIN_FREQUENCY: f64 = 1e-8;
/// RK4 steps per period and per unit of `1/ε`.
pub const STEPS_PER_PERIOD: usize = 4096;

/// Reduced problem at fixed energy, supplied explicitly.
pub trait ReducedFamily: Sync {
    /// `2 d_Z`, ordered `(x, y)`.
    fn fast_dim(&self) -> usize;
    fn eps(&self) -> f64;
    /// `∂_I h` on the energy level `E`.
    fn frequency(&self, e: f64) -> Result<f64>;
    /// Symmetric `Ã(ψ)`, row-major.
    fn linear_part(&self, e: f64, psi: f64) -> Vec<f64>;
    /// `ρ̂ + μ B z + ∂_z r̄`, multiplied by `μ` in the equations.
    fn forcing(&self, e: f64, psi: f64, z: &[f64]) -> Vec<f64>;
    fn mu(&self) -> f64;
}

fn apply_j(v: &[f64]) -> Vec<f64> {
    let n = v.len() / 2;
    let mut out = vec![0.0; v.len()];
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
    out
}

/// `T = 2π / ∂_I h`.
pub fn period<F: ReducedFamily + ?Sized>(family: &F, e: f64) -> Result<f64> {
    let w = family.frequency(e)?;
    if !w.is_finite() || w.abs() <= MIN_FREQUENCY {
        return Err(Error::DegenerateFrequency { energy: e, frequency: w });
    }
    Ok(2.0 * std::f64::consts::PI / w)
}

/// `(step, count)` for one period.
pub fn step_size<F: ReducedFamily + ?Sized>(family: &F, t: f64) -> (f64, usize) {
    let n = STEPS_PER_PERIOD * (1.0 / family.eps()).ceil() as usize;
    (t / n as f64, n)
}

/// The stroboscopic map `z(0) ↦ z(T)` of the full reduced equations.
pub fn stroboscopic_map<F: ReducedFamily + ?Sized>(family: &F, e: f64, z_start: &[f64]) -> Result<Vec<f64>> {
    stroboscopic_map_with(family, e, z_start, 1)
}

/// As [`stroboscopic_map`] with the step refined `refine` times.
pub fn stroboscopic_map_with<F: ReducedFamily + ?Sized>(family: &F, e: f64, z_start: &[f64], refine: usize) -> Result<Vec<f64>> {
    let d = family.fast_dim();
    if z_start.len() != d {
        return Err(Error::dims(format!("reduced family has {d} fast coordinates")));
    }
    let t = period(family, e)?;
    let (h, n) = step_size(family, t);
    let (eps, mu) = (family.eps(), family.mu());
    let rhs = |psi: f64, z: &[f64]| -> Result<Vec<f64>> {
        let a = family.linear_part(e, psi);
        let mut g = mat_vec(&a, d, d, z);
        if mu != 0.0 {
            for (gi, fi) in g.iter_mut().zip(family.forcing(e, psi, z)) {
                *gi += mu * fi;
            }
        }
        Ok(apply_j(&g).into_iter().map(|v| v / eps).collect())
    };
    ode::rk4(rhs, 0.0, z_start, h / refine as f64, n * refine, |_, _| {})
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonodromyResult {
    pub energy: f64,
    pub period: f64,
    /// `Ψ(T)`, row-major.
    pub psi_t: Vec<f64>,
    /// Sorted by argument, then modulus.
    pub multipliers: Vec<[f64; 2]>,
    /// `min_i |λ_i − 1|`.
    pub gap_margin: f64,
    pub det: f64,
    pub mu: f64,
}

impl MonodromyResult {
    pub fn multipliers_c64(&self) -> Vec<C64> {
        self.multipliers.iter().map(|p| C64::new(p[0], p[1])).collect()
    }
}

/// Fundamental matrix of `ε ∂_ψ z = J Ã(ψ) z` over one period.
pub fn monodromy<F: ReducedFamily + ?Sized>(family: &F, e: f64) -> Result<MonodromyResult> {
    monodromy_with(family, e, 1)
}

/// As [`monodromy`] with the step refined `refine` times.
pub fn monodromy_with<F: ReducedFamily + ?Sized>(family: &F, e: f64, refine: usize) -> Result<MonodromyResult> {
    let d = family.fast_dim();
    let t = period(family, e)?;
    let (h, n) = step_size(family, t);
    let eps = family.eps();
    // Columns of Ψ stacked into one state vector.
    let rhs = |psi: f64, y: &[f64]| -> Result<Vec<f64>> {
        let a = family.linear_part(e, psi);
        let mut out = Vec::with_capacity(d * d);
        for col in y.chunks(d) {
            out.extend(apply_j(&mat_vec(&a, d, d, col)).into_iter().map(|v| v / eps));
        }
        Ok(out)
    };
    let mut y0 = vec![0.0; d * d];
    for i in 0..d {
        y0[i * d + i] = 1.0;
    }
    let y = ode::rk4(rhs, 0.0, &y0, h / refine as f64, n * refine, |_, _| {})?;
    let m = DMatrix::from_column_slice(d, d, &y);
    let det = m.determinant();
    let mut lam: Vec<C64> = m.complex_eigenvalues().iter().map(|c| C64::new(c.re, c.im)).collect();
    lam.sort_by(|a, b| a.arg().total_cmp(&b.arg()).then(a.norm().total_cmp(&b.norm())));
    let gap_margin = lam.iter().map(|l| (l - 1.0).norm()).fold(f64::INFINITY, f64::min);
    let mut psi_t = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            psi_t[r * d + c] = m[(r, c)];
        }
    }
    Ok(MonodromyResult {
        energy: e,
        period: t,
        psi_t,
        multipliers: lam.iter().map(|l| [l.re, l.im]).collect(),
        gap_margin,
        det,
        mu: family.mu(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub energy: f64,
    /// `None` when the frequency is degenerate.
    pub monodromy: Option<MonodromyResult>,
    pub admissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    pub mu: f64,
    pub threshold: f64,
    pub rows: Vec<GapRow>,
    /// Maximal runs of excluded grid energies, as `[first, last]`.
    pub excluded: Vec<[f64; 2]>,
    /// Excluded share of the grid span; each energy owns the cell between
    /// the midpoints to its neighbours.
    pub excluded_measure: f64,
}

/// Classify an ordered energy grid by `|λ_i(E) − 1| ≥ √μ`.
pub fn gap_set_scan<F: ReducedFamily + ?Sized>(family: &F, grid: &[f64], mu: f64) -> Result<GapScan> {
    if grid.len() < 2 || grid.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::invalid("energy grid must be strictly increasing with at least two points"));
    }
    if !(mu > 0.0) {
        return Err(Error::invalid("mu must be positive"));
    }
    let threshold = mu.sqrt();
    let rows: Vec<GapRow> = grid
        .par_iter()
        .map(|&e| match monodromy(family, e) {
            Ok(m) => Ok(GapRow { energy: e, admissible: m.gap_margin >= threshold, monodromy: Some(m) }),
            Err(Error::DegenerateFrequency { .. }) => Ok(GapRow { energy: e, monodromy: None, admissible: false }),
            Err(err) => Err(err),
        })
        .collect::<Result<_>>()?;
    let n = grid.len();
    let cell = |i: usize| {
        let lo = if i == 0 { grid[0] } else { 0.5 * (grid[i - 1] + grid[i]) };
        let hi = if i + 1 == n { grid[n - 1] } else { 0.5 * (grid[i] + grid[i + 1]) };
        hi - lo
    };
    let mut excluded = Vec::new();
    let mut measure = 0.0;
    let mut run: Option<[f64; 2]> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.admissible {
            excluded.extend(run.take());
        } else {
            measure += cell(i);
            run = Some(match run {
                Some([a, _]) => [a, r.energy],
                None => [r.energy, r.energy],
            });
        }
    }
    excluded.extend(run);
    Ok(GapScan { mu, threshold, rows, excluded, excluded_measure: measure / (grid[n - 1] - grid[0]) })
}

/// Rotor `h(I) = I + ½I²` driving oscillators of frequencies `omegas`;
/// the first is modulated by `1 + a cos φ` in its `x` stiffness and forced
/// by `ρ̂ = (cos φ, sin φ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotorFamily {
    pub eps: f64,
    pub omegas: Vec<f64>,
    pub modulation: f64,
    pub mu: f64,
}

impl RotorFamily {
    pub fn one_mode(eps: f64, modulation: f64, mu: f64) -> Self {
        RotorFamily { eps, omegas: vec![1.0], modulation, mu }
    }
    pub fn two_modes(eps: f64, modulation: f64, mu: f64) -> Self {
        RotorFamily { eps, omegas: vec![1.0, 2f64.sqrt()], modulation, mu }
    }
    /// `Ã = ω_f I`, one oscillator.
    pub fn constant(eps: f64, omega_f: f64, mu: f64) -> Self {
        RotorFamily { eps, omegas: vec![omega_f], modulation: 0.0, mu }
    }
}

impl ReducedFamily for RotorFamily {
    fn fast_dim(&self) -> usize {
        2 * self.omegas.len()
    }
    fn eps(&self) -> f64 {
        self.eps
    }
    fn frequency(&self, e: f64) -> Result<f64> {
        if 1.0 + 2.0 * e < 0.0 {
            return Err(Error::invalid(format!("energy {e} below the rotor minimum -1/2")));
        }
        Ok((1.0 + 2.0 * e).sqrt())
    }
    fn linear_part(&self, e: f64, psi: f64) -> Vec<f64> {
        let n = self.omegas.len();
        let d = 2 * n;
        let phi = self.frequency(e).unwrap_or(0.0) * psi;
        let mut a = vec![0.0; d * d];
        for (k, &w) in self.omegas.iter().enumerate() {
            let m = if k == 0 { 1.0 + self.modulation * phi.cos() } else { 1.0 };
            a[k * d + k] = w * m;
            a[(n + k) * d + n + k] = w;
        }
        a
    }
    fn forcing(&self, e: f64, psi: f64, _z: &[f64]) -> Vec<f64> {
        let n = self.omegas.len();
        let phi = self.frequency(e).unwrap_or(0.0) * psi;
        let mut f = vec![0.0; 2 * n];
        f[0] = phi.cos();
        f[n] = phi.sin();
        f
    }
    fn mu(&self) -> f64 {
        self.mu
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unforced_origin_is_fixed() {
        let f = RotorFamily::one_mode(0.5, 0.2, 0.0);
        let z = stroboscopic_map(&f, 0.3, &[0.0, 0.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_linear_part_has_identity_monodromy() {
        let f = RotorFamily::constant(0.5, 0.0, 0.0);
        let m = monodromy(&f, 0.0).unwrap();
        assert_eq!(m.psi_t, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(m.gap_margin == 0.0);
    }
}
