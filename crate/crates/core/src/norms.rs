//! Sup norms over complex neighbourhoods, Cauchy-estimate self-tests and
//! exponential decay fits.
//!
//! The ν-neighbourhood of a real box `V` is `{ x + δ : x ∈ V, ‖Re δ‖∞ + ‖Im δ‖∞ ≤ ν }`,
//! i.e. all complex points within distance ν of `V` in the complexified max
//! norm. Real displacements are therefore part of the neighbourhood: for
//! `f(w) = w` on `[0, 2]` with ν = 0.5 the supremum is 2.5, attained at the
//! real point 2.5.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;

pub const DEFAULT_SEED: u64 = 0x5EED;
pub const DEFAULT_SAMPLES: usize = 2048;

/// One factor of a product neighbourhood: a real box and its width.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub width: f64,
}

impl Block {
    pub fn new(lo: &[f64], hi: &[f64], width: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::dims("block bounds differ in length or are empty"));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(Error::invalid("block bounds must be finite with lo <= hi"));
        }
        if !(width >= 0.0 && width.is_finite()) {
            return Err(Error::invalid(format!("width {width} must be finite and >= 0")));
        }
        Ok(Block { lo: lo.to_vec(), hi: hi.to_vec(), width })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    pub value: f64,
    pub argmax: Vec<[f64; 2]>,
    pub points: usize,
}

/// Deterministic quasi-random sampler of complex neighbourhoods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampler {
    pub samples: usize,
    pub seed: u64,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler { samples: DEFAULT_SAMPLES, seed: DEFAULT_SEED }
    }
}

const PRIMES: [u64; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103,
    107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut inv, mut f) = (0.0, 1.0 / base as f64);
    while i > 0 {
        inv += (i % base) as f64 * f;
        i /= base;
        f /= base as f64;
    }
    inv
}

/// Probes: the box centre lifted to ±iν, every vertex pushed outward along
/// the real axes, and the vertices lifted into four imaginary directions.
const MAX_CORNER_DIM: usize = 8;

impl Sampler {
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        Ok(Sampler { samples, seed })
    }

    pub fn with_samples(self, samples: usize) -> Self {
        Sampler { samples, ..self }
    }

    fn corners(blocks: &[Block]) -> Vec<Vec<C64>> {
        let dim: usize = blocks.iter().map(Block::dim).sum();
        if dim > MAX_CORNER_DIM {
            return Vec::new();
        }
        let mut out = Vec::new();
        for sgn in [1.0, -1.0] {
            out.push(
                blocks
                    .iter()
                    .flat_map(|b| (0..b.dim()).map(move |i| C64::new(0.5 * (b.lo[i] + b.hi[i]), sgn * b.width)))
                    .collect(),
            );
        }
        for mask in 0u32..(1 << dim) {
            let sign = |c: usize| if mask >> c & 1 == 1 { 1.0 } else { -1.0 };
            for variant in 0..5 {
                let mut p = Vec::with_capacity(dim);
                let mut c = 0;
                for b in blocks {
                    for i in 0..b.dim() {
                        let s = sign(c);
                        let x = if s > 0.0 { b.hi[i] } else { b.lo[i] };
                        p.push(match variant {
                            0 => C64::new(x + s * b.width, 0.0),
                            1 => C64::new(x, b.width),
                            2 => C64::new(x, -b.width),
                            3 => C64::new(x, s * b.width),
                            _ => C64::new(x, -s * b.width),
                        });
                        c += 1;
                    }
                }
                out.push(p);
            }
        }
        out
    }

    /// Sample points of the product neighbourhood: the vertex probes first,
    /// then `self.samples` scrambled Halton points. Sample sets are nested
    /// in the sample count.
    pub fn points(&self, blocks: &[Block]) -> Vec<Vec<C64>> {
        let dim: usize = blocks.iter().map(Block::dim).sum();
        let n_coords = 3 * dim + blocks.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shift: Vec<f64> = (0..n_coords).map(|_| rng.gen::<f64>()).collect();
        let mut out = Self::corners(blocks);
        out.reserve(self.samples);
        for s in 0..self.samples {
            let mut q = (0..n_coords).map(|c| {
                let h = radical_inverse(s as u64 + 1, PRIMES[c % PRIMES.len()]) + shift[c];
                h - h.floor()
            });
            let mut p = Vec::with_capacity(dim);
            for b in blocks {
                let d = b.dim();
                let base: Vec<f64> = (0..d).map(|i| b.lo[i] + (b.hi[i] - b.lo[i]) * q.next().unwrap()).collect();
                let unit = |v: Vec<f64>| {
                    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                    if m > 0.0 {
                        v.into_iter().map(|x| x / m).collect()
                    } else {
                        vec![1.0; d]
                    }
                };
                let re: Vec<f64> = unit((0..d).map(|_| 2.0 * q.next().unwrap() - 1.0).collect());
                let im: Vec<f64> = unit((0..d).map(|_| 2.0 * q.next().unwrap() - 1.0).collect());
                let lam = q.next().unwrap();
                for i in 0..d {
                    p.push(C64::new(base[i] + lam * b.width * re[i], (1.0 - lam) * b.width * im[i]));
                }
            }
            out.push(p);
        }
        out
    }

    /// Largest value of `f` over the sample points; `f` returns a norm.
    pub fn sup<F>(&self, blocks: &[Block], f: F) -> Result<SupEstimate>
    where
        F: Fn(&[C64]) -> Result<f64> + Sync,
    {
        let pts = self.points(blocks);
        let vals: Vec<Result<f64>> = pts.par_iter().map(|p| f(p)).collect();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, v) in vals.into_iter().enumerate() {
            let v = v?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sup-norm sample at {:?}", pts[i])));
            }
            if v > best.0 {
                best = (v, i);
            }
        }
        Ok(SupEstimate {
            value: best.0,
            argmax: pts[best.1].iter().map(|c| [c.re, c.im]).collect(),
            points: pts.len(),
        })
    }

    /// `‖f‖` over the ν-neighbourhood of one box.
    pub fn sup_norm<F>(&self, lo: &[f64], hi: &[f64], width: f64, f: F) -> Result<f64>
    where
        F: Fn(&[C64]) -> Result<f64> + Sync,
    {
        Ok(self.sup(&[Block::new(lo, hi, width)?], f)?.value)
    }

    /// Compare `‖∂f‖` on the (ν−ξ)-neighbourhood with `‖f‖_ν / ξ`.
    pub fn cauchy_check<F>(&self, lo: &[f64], hi: &[f64], nu: f64, xi: f64, f: F) -> Result<CauchyReport>
    where
        F: Fn(&[Jet<C64>]) -> Result<Jet<C64>> + Sync,
    {
        if !(0.0 < xi && xi < nu) {
            return Err(Error::invalid(format!("Cauchy check needs 0 < xi < nu, got xi={xi}, nu={nu}")));
        }
        let inner = Block::new(lo, hi, nu - xi)?;
        let outer = Block::new(lo, hi, nu)?;
        let lhs = self.sup(&[inner], |p| {
            let j = f(&Jet::variables(p, 1)?)?;
            Ok(derivative_norm(&j))
        })?;
        let sup_f = self.sup(&[outer], |p| {
            let j = f(&Jet::variables(p, 0)?)?;
            Ok(crate::scalar::norm2(j.value()))
        })?;
        let rhs = sup_f.value / xi;
        Ok(CauchyReport { lhs: lhs.value, rhs, holds: lhs.value <= rhs * (1.0 + CAUCHY_SLACK) })
    }
}

/// Sampling slack allowed by the Cauchy self-test.
pub const CAUCHY_SLACK: f64 = 0.05;

/// Operator norm of the Jacobian from the complexified max norm to the
/// Euclidean norm: the unit ball's extreme points are the sign vectors.
pub fn derivative_norm(j: &Jet<C64>) -> f64 {
    let d = j.dim_in();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << d.min(16)) {
        let mut s = 0.0;
        for o in 0..j.dim_out() {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d {
                let sg = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
                acc += j.grad(o, i) * sg;
            }
            s += acc.norm_sqr();
        }
        best = best.max(s.sqrt());
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Least-squares fit of `ln δ − p ln ε = a + b/ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub prefactor_power: f64,
    /// Fewer than three points, no spread in 1/ε, or no variation in δ.
    pub degenerate: bool,
}

/// Default power of the algebraic prefactor in `δ ≈ C ε^p e^{b/ε}`.
pub const PREFACTOR_POWER: f64 = 2.0;

pub fn fit_decay(eps: &[f64], delta: &[f64], prefactor_power: f64) -> Result<DecayFit> {
    if eps.len() != delta.len() || eps.is_empty() {
        return Err(Error::dims("fit needs matching, non-empty ε and δ lists"));
    }
    if eps.iter().chain(delta).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("fit needs positive finite ε and δ"));
    }
    let n = eps.len() as f64;
    let x: Vec<f64> = eps.iter().map(|e| 1.0 / e).collect();
    let y: Vec<f64> = eps.iter().zip(delta).map(|(e, d)| d.ln() - prefactor_power * e.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let raw_flat = delta.iter().all(|d| (d / delta[0] - 1.0).abs() < 1e-12);
    let spread = sxx > 1e-300;
    let slope = if spread { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy > 1e-300 && spread { (sxy * sxy) / (sxx * syy) } else { 0.0 };
    Ok(DecayFit {
        slope: if raw_flat { 0.0 } else { slope },
        intercept,
        r_squared,
        n_points: eps.len(),
        prefactor_power,
        degenerate: eps.len() < 3 || !spread || raw_flat || syy <= 1e-300,
    })
}

/// Decay slope predicted by the optimal-truncation count `m ln 2 / (4 K₁ ε)`,
/// converted to original-unit ε through the normalization `ε_norm = scale·ε`.
pub fn theory_slope(m: f64, k1: f64, scale: f64) -> f64 {
    -m * std::f64::consts::LN_2 / (4.0 * k1 * scale)
}

/// Per-ε δ traces and the fitted law.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub eps_values: Vec<f64>,
    pub traces: Vec<Vec<(usize, f64)>>,
    pub min_delta: Vec<f64>,
    pub fit: Option<DecayFit>,
    pub theory_slope: Option<f64>,
}

impl DecayReport {
    /// Single-run report.
    pub fn single(eps: f64, trace: Vec<(usize, f64)>, theory: Option<f64>) -> Self {
        let min = trace.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        DecayReport {
            eps_values: vec![eps],
            traces: vec![trace],
            min_delta: vec![min],
            fit: None,
            theory_slope: theory,
        }
    }

    /// Merge single runs and fit across ε. The theory slope reported is the
    /// one from the smallest ε, where the asymptotics are sharpest.
    pub fn combine(runs: &[DecayReport], prefactor_power: f64) -> Result<Self> {
        let mut out = DecayReport::default();
        let mut best: Option<(f64, f64)> = None;
        for r in runs {
            for (i, &e) in r.eps_values.iter().enumerate() {
                out.eps_values.push(e);
                out.traces.push(r.traces[i].clone());
                out.min_delta.push(r.min_delta[i]);
                if let Some(t) = r.theory_slope {
                    if best.is_none_or(|(be, _)| e < be) {
                        best = Some((e, t));
                    }
                }
            }
        }
        out.theory_slope = best.map(|b| b.1);
        if out.min_delta.iter().all(|d| *d > 0.0) && !out.eps_values.is_empty() {
            out.fit = Some(fit_decay(&out.eps_values, &out.min_delta, prefactor_power)?);
        }
        Ok(out)
    }
}
