//! Refinement of Hamiltonian slow-fast systems.
//!
//! Each level `H_n(w, z)` is brought closer to `h_n(w) + ½⟨A_n z, z⟩ + r_n`
//! by straightening its constrained equilibria `∂_z H_n(w, ζ(w)) = 0` with
//! the symplectic map generated by
//! `G = ⟨x, y₊⟩ + ε⁻¹⟨u, v₊⟩ − ⟨ζ^x(u, v₊), y₊⟩ + ⟨ζ^y(u, v₊), x⟩`.
//! Levels after the first are stored as tabulated cubic models in `z`.

use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::linalg::{self, checked_lu, Lu};
use crate::norms::{theory_slope, Block, DecayReport, Sampler};
use crate::ode;
use crate::refine_general::{Halt, StopMode, MAX_CONTRACTION_STEPS, SOLVER_TOL, STAGNATION};
use crate::scalar::{norm2, Scalar};
use crate::sysmodel::{padded_axes, HamiltonianSystem};
use crate::table::{Axis, TensorTable};

/// Plain fixed-point steps of the inner `u` solve before switching to Newton.
pub const INNER_FIXED_POINT_STEPS: usize = 20;
pub const INNER_MAX_STEPS: usize = 60;
pub const INNER_TOL: f64 = 1e-15;
/// Pivot tolerance of the positive-definiteness test.
pub const PD_TOL: f64 = 1e-10;
/// `z₊` is drawn from this multiple of the fast box in energy checks, where
/// the cubic model is exact to rounding.
pub const ENERGY_PROBE_SCALE: f64 = 1e-2;

fn pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect()
}

fn triples(d: usize) -> Vec<(usize, usize, usize)> {
    (0..d).flat_map(|i| (i..d).flat_map(move |j| (j..d).map(move |k| (i, j, k)))).collect()
}

/// Number of distinct orderings of a sorted triple.
fn orderings(i: usize, j: usize, k: usize) -> f64 {
    if i == k {
        1.0
    } else if i == j || j == k {
        3.0
    } else {
        6.0
    }
}

/// `h(w) + ⟨ρ(w), z⟩ + ½⟨A(w) z, z⟩ + ⅙ T(w)[z, z, z]` with all
/// coefficients tabulated on one slow grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicModel {
    d: usize,
    /// Outputs: `h`, `ρ_i`, `A_ij` (i ≤ j), `T_ijk` (i ≤ j ≤ k).
    table: TensorTable,
}

/// Coefficients of a cubic model at one slow point.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCoeffs<S> {
    pub h: S,
    pub rho: Vec<S>,
    /// Row-major `d × d`, symmetric by construction.
    pub a: Vec<S>,
    /// Entries over sorted index triples.
    pub t: Vec<S>,
}

impl CubicModel {
    pub fn n_outputs(d: usize) -> usize {
        1 + d + d * (d + 1) / 2 + d * (d + 1) * (d + 2) / 6
    }

    /// Tabulate from order-3 jets in `z` at `z = 0`, one per grid node.
    pub fn from_jets<F>(axes: &[Axis], d: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Jet<f64>> + Sync,
    {
        let (p2, p3) = (pairs(d), triples(d));
        let table = TensorTable::from_fn(axes, Self::n_outputs(d), |w| {
            let j = f(w)?;
            if j.order() < 3 || j.dim_in() != d || j.dim_out() != 1 {
                return Err(Error::dims("cubic model needs scalar order-3 jets in z"));
            }
            let mut v = vec![j.val()];
            v.extend((0..d).map(|i| j.grad(0, i)));
            v.extend(p2.iter().map(|&(i, k)| j.hess(0, i, k)));
            v.extend(p3.iter().map(|&(i, k, l)| j.third(0, i, k, l)));
            Ok(v)
        })?;
        Ok(CubicModel { d, table })
    }

    pub fn table(&self) -> &TensorTable {
        &self.table
    }

    pub fn fast_dim(&self) -> usize {
        self.d
    }

    fn unpack<S: Scalar>(&self, c: &[S]) -> ModelCoeffs<S> {
        let d = self.d;
        let mut a = vec![S::zero(); d * d];
        for (n, &(i, j)) in pairs(d).iter().enumerate() {
            a[i * d + j] = c[1 + d + n];
            a[j * d + i] = c[1 + d + n];
        }
        let off = 1 + d + d * (d + 1) / 2;
        ModelCoeffs { h: c[0], rho: c[1..1 + d].to_vec(), a, t: c[off..].to_vec() }
    }

    pub fn coefficients<S: Scalar>(&self, w: &[S]) -> Result<ModelCoeffs<S>> {
        Ok(self.unpack(&self.table.eval(w)?))
    }

    pub fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<Jet<S>> {
        if z.len() != self.d {
            return Err(Error::dims(format!("cubic model in {} fast variables got {}", self.d, z.len())));
        }
        let c = self.table.eval_at_jet(w)?.components();
        let d = self.d;
        let mut acc = c[0].clone();
        for i in 0..d {
            acc = acc.try_add(&c[1 + i].try_mul(&z[i])?)?;
        }
        let mut n = 1 + d;
        for (i, j) in pairs(d) {
            let f = if i == j { 0.5 } else { 1.0 };
            acc = acc.try_add(&(c[n].try_mul(&z[i])?.try_mul(&z[j])? * f))?;
            n += 1;
        }
        for (i, j, k) in triples(d) {
            let f = orderings(i, j, k) / 6.0;
            acc = acc.try_add(&(c[n].try_mul(&z[i])?.try_mul(&z[j])?.try_mul(&z[k])? * f))?;
            n += 1;
        }
        Ok(acc)
    }

    /// Monomials `m_k(z)` matching the output order, and their `z`-gradients.
    fn monomials(&self, z: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.d;
        let mut m = vec![1.0];
        let mut dm = vec![vec![0.0; d]];
        for i in 0..d {
            m.push(z[i]);
            let mut g = vec![0.0; d];
            g[i] = 1.0;
            dm.push(g);
        }
        for (i, j) in pairs(d) {
            let f = if i == j { 0.5 } else { 1.0 };
            m.push(f * z[i] * z[j]);
            let mut g = vec![0.0; d];
            g[i] += f * z[j];
            g[j] += f * z[i];
            dm.push(g);
        }
        for (i, j, k) in triples(d) {
            let f = orderings(i, j, k) / 6.0;
            m.push(f * z[i] * z[j] * z[k]);
            let mut g = vec![0.0; d];
            g[i] += f * z[j] * z[k];
            g[j] += f * z[i] * z[k];
            g[k] += f * z[i] * z[j];
            dm.push(g);
        }
        (m, dm)
    }

    /// `(∂_w H, ∂_z H)` at a real point.
    pub fn gradient(&self, w: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let j = self.table.eval_jet(w, 1)?;
        let (m, dm) = self.monomials(z);
        let s = w.len();
        let mut gw = vec![0.0; s];
        let mut gz = vec![0.0; self.d];
        for (k, (mk, dmk)) in m.iter().zip(&dm).enumerate() {
            let c = j.value()[k];
            for (a, g) in gw.iter_mut().enumerate() {
                *g += j.grad(k, a) * mk;
            }
            for (i, g) in gz.iter_mut().enumerate() {
                *g += c * dmk[i];
            }
        }
        Ok((gw, gz))
    }

    /// `(H, ½⟨A z, z⟩ + ⅙ T z³)` at a real point.
    pub fn energy_split(&self, w: &[f64], z: &[f64]) -> Result<(f64, f64)> {
        let c = self.table.eval(w)?;
        let (m, _) = self.monomials(z);
        let h: f64 = c.iter().zip(&m).map(|(a, b)| a * b).sum();
        let skip = 1 + self.d;
        let l: f64 = c[skip..].iter().zip(&m[skip..]).map(|(a, b)| a * b).sum();
        Ok((h, l))
    }
}

/// One level of the Hamiltonian refinement.
#[derive(Clone, Debug)]
pub enum HamLevel {
    /// The system as given.
    Base(Arc<HamiltonianSystem>),
    Model(CubicModel),
}

impl HamLevel {
    pub fn fast_dim(&self) -> usize {
        match self {
            HamLevel::Base(s) => 2 * s.dofs().1,
            HamLevel::Model(m) => m.fast_dim(),
        }
    }

    pub fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<Jet<S>> {
        match self {
            HamLevel::Base(s) => s.eval(w, z),
            HamLevel::Model(m) => m.eval(w, z),
        }
    }

    pub fn value<S: Scalar>(&self, w: &[S], z: &[S]) -> Result<S> {
        Ok(self.z_jet(w, z, 0)?.val())
    }

    /// Jet in `z` at `(w, z)` with `w` frozen.
    pub fn z_jet<S: Scalar>(&self, w: &[S], z: &[S], order: usize) -> Result<Jet<S>> {
        let d = z.len();
        let wj: Vec<Jet<S>> = w.iter().map(|&x| Jet::scalar(x, order, d)).collect();
        self.eval(&wj, &Jet::variables(z, order)?)
    }

    /// `(h, ρ, A)` at `w`, `A` row-major.
    pub fn normal_form<S: Scalar>(&self, w: &[S]) -> Result<(S, Vec<S>, Vec<S>)> {
        match self {
            HamLevel::Model(m) => {
                let c = m.coefficients(w)?;
                Ok((c.h, c.rho, c.a))
            }
            HamLevel::Base(_) => {
                let d = self.fast_dim();
                let j = self.z_jet(w, &vec![S::zero(); d], 2)?;
                let rho = (0..d).map(|i| j.grad(0, i)).collect();
                let a = (0..d * d).map(|n| j.hess(0, n / d, n % d)).collect();
                Ok((j.val(), rho, a))
            }
        }
    }

    pub fn rho<S: Scalar>(&self, w: &[S]) -> Result<Vec<S>> {
        match self {
            HamLevel::Model(m) => Ok(m.coefficients(w)?.rho),
            HamLevel::Base(_) => {
                let d = self.fast_dim();
                let j = self.z_jet(w, &vec![S::zero(); d], 1)?;
                Ok((0..d).map(|i| j.grad(0, i)).collect())
            }
        }
    }

    /// `r(w, z) = H − h − ⟨ρ, z⟩ − ½⟨A z, z⟩`.
    pub fn remainder<S: Scalar>(&self, w: &[S], z: &[S]) -> Result<S> {
        let d = z.len();
        let (h, rho, a) = self.normal_form(w)?;
        let az = linalg::mat_vec(&a, d, d, z);
        let mut r = self.value(w, z)? - h;
        for i in 0..d {
            r -= rho[i] * z[i] + az[i] * z[i] * 0.5;
        }
        Ok(r)
    }
}

/// Normal form of a composed level at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct HamNormalForm {
    pub h: f64,
    pub rho: Vec<f64>,
    pub a: Vec<f64>,
    /// Third `z`-derivative over sorted index triples.
    pub t: Vec<f64>,
}

/// Result of the constrained-equilibrium solve at one slow point.
#[derive(Clone, Debug)]
pub struct EquilibriumSolve<S> {
    pub zeta: Vec<S>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `∂_z H(w, ζ) = ρ + Aζ + ∂_z r(w, ζ) = 0` by `ζ ← ζ − A⁻¹ ∂_z H(w, ζ)`
/// from `ζ = −A⁻¹ρ`.
pub fn solve_constrained_equilibria<S: Scalar>(level: &HamLevel, w: &[S], tol: f64) -> Result<EquilibriumSolve<S>> {
    let d = level.fast_dim();
    let pt: Vec<C64> = w.iter().map(|x| x.to_c64()).collect();
    let (_, rho, a) = level.normal_form(w)?;
    let lu = checked_lu(&a, d, &pt)?;
    let tol_abs = tol * norm2(&rho).max(1.0);
    let a_norm = linalg::op_norm(&a, d, d).max(1.0);
    let mut zeta: Vec<S> = lu.solve(&rho).into_iter().map(|x| -x).collect();
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    loop {
        let j = level.z_jet(w, &zeta, 1)?;
        let grad: Vec<S> = (0..d).map(|i| j.grad(0, i)).collect();
        let residual = norm2(&grad);
        if residual <= tol_abs * a_norm || last_step < tol_abs {
            return Ok(EquilibriumSolve { zeta, iterations, residual });
        }
        if iterations == MAX_CONTRACTION_STEPS {
            return Err(Error::NonContraction { iterations, contraction_est: f64::NAN, last_step });
        }
        let step = lu.solve(&grad);
        for (z, s) in zeta.iter_mut().zip(&step) {
            *z -= *s;
        }
        last_step = norm2(&step);
        iterations += 1;
        if !last_step.is_finite() {
            return Err(Error::NonFinite("constrained equilibrium solve".into()));
        }
    }
}

/// Jet of the constrained equilibrium `ζ(w)` in `w`, up to order 2.
pub fn equilibrium_jet(level: &HamLevel, w: &[f64], order: usize) -> Result<Jet<f64>> {
    if order > 2 {
        return Err(Error::OrderExceeded { requested: order, max: 2 });
    }
    let (s, d) = (w.len(), level.fast_dim());
    let zeta = solve_constrained_equilibria(level, w, SOLVER_TOL)?.zeta;
    if order == 0 {
        return Jet::constant(&zeta, 0, s);
    }
    let pt: Vec<f64> = w.iter().chain(&zeta).copied().collect();
    let vars = Jet::variables(&pt, order + 1)?;
    let hj = level.eval(&vars[..s], &vars[s..])?;
    let dz: Vec<Jet<f64>> = (0..d).map(|i| hj.partial(s + i)).collect::<Result<_>>()?;
    let hzz: Vec<f64> = (0..d * d).map(|n| hj.hess(0, s + n / d, s + n % d)).collect();
    let minv = Lu::new(&hzz, d)?.inverse();
    let wj = Jet::variables(w, order)?;
    let mut zj: Vec<Jet<f64>> = zeta.iter().map(|&z| Jet::scalar(z, order, s)).collect();
    for _ in 0..=order {
        let inner: Vec<Jet<f64>> = wj.iter().chain(&zj).cloned().collect();
        let f: Vec<Jet<f64>> = dz.iter().map(|g| g.compose(&inner)).collect::<Result<_>>()?;
        zj = (0..d)
            .map(|i| {
                let mut zi = zj[i].clone();
                for (k, fk) in f.iter().enumerate() {
                    zi = zi.try_sub(&fk.scale(minv[i * d + k]))?;
                }
                Ok(zi)
            })
            .collect::<Result<_>>()?;
    }
    Jet::stack(&zj)
}

/// The symplectic change of variables `(w₊, z₊) ↦ (w, z)` built from one
/// tabulated graph `ζ = (ζ^x, ζ^y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymplecticLayer {
    eps: f64,
    d_slow: usize,
    d_fast: usize,
    zeta: TensorTable,
    /// `∂ζ/∂u_a` then `∂ζ/∂v_a`.
    dzeta: Vec<TensorTable>,
}

impl SymplecticLayer {
    /// `zeta` lives on `(u, v)` axes with outputs `(ζ^x, ζ^y)`.
    pub fn new(eps: f64, d_slow: usize, d_fast: usize, zeta: TensorTable) -> Result<Self> {
        if zeta.dim() != 2 * d_slow || zeta.n_out() != 2 * d_fast {
            return Err(Error::dims("layer table has the wrong shape"));
        }
        let dzeta = (0..2 * d_slow).map(|a| zeta.derivative(a)).collect::<Result<_>>()?;
        Ok(SymplecticLayer { eps, d_slow, d_fast, zeta, dzeta })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn zeta_table(&self) -> &TensorTable {
        &self.zeta
    }
    /// `(d_W, d_Z)`.
    pub fn dofs(&self) -> (usize, usize) {
        (self.d_slow, self.d_fast)
    }

    /// Partials `∂_a g` for `a ∈ axes` at `ŵ` with `x` and `y₊` given.
    fn g_partials<S: Scalar>(&self, what: &[Jet<S>], x: &[Jet<S>], yp: &[Jet<S>], axes: Range<usize>) -> Result<Vec<Jet<S>>> {
        let n = self.d_fast;
        axes.map(|a| {
            let dz = self.dzeta[a].eval_at_jet(what)?.components();
            let mut acc = dz[n].try_mul(&x[0])?.try_sub(&dz[0].try_mul(&yp[0])?)?;
            for i in 1..n {
                acc = acc.try_add(&dz[n + i].try_mul(&x[i])?)?.try_sub(&dz[i].try_mul(&yp[i])?)?;
            }
            Ok(acc)
        })
        .collect()
    }

    /// `ζ(ŵ)`, `x = x₊ + ζ^x(ŵ)` and `∂_a g` for `a ∈ axes`, with `ŵ = (u, v₊)`.
    #[allow(clippy::type_complexity)]
    fn pieces<S: Scalar>(
        &self,
        u: &[Jet<S>],
        vp: &[Jet<S>],
        xp: &[Jet<S>],
        yp: &[Jet<S>],
        axes: Range<usize>,
    ) -> Result<(Vec<Jet<S>>, Vec<Jet<S>>, Vec<Jet<S>>)> {
        let what: Vec<Jet<S>> = u.iter().chain(vp).cloned().collect();
        let zeta = self.zeta.eval_at_jet(&what)?.components();
        let x: Vec<Jet<S>> = (0..self.d_fast).map(|i| xp[i].try_add(&zeta[i])).collect::<Result<_>>()?;
        let g = self.g_partials(&what, &x, yp, axes)?;
        Ok((zeta, x, g))
    }

    /// `F(u) = u + ε ∂_{v₊} g − u₊`.
    fn u_residual<S: Scalar>(&self, u: &[Jet<S>], up: &[Jet<S>], vp: &[Jet<S>], xp: &[Jet<S>], yp: &[Jet<S>]) -> Result<Vec<Jet<S>>> {
        let k = self.d_slow;
        let (_, _, g) = self.pieces(u, vp, xp, yp, k..2 * k)?;
        (0..k).map(|a| u[a].try_add(&(&g[a] * self.eps))?.try_sub(&up[a])).collect()
    }

    fn u_jacobian<S: Scalar>(&self, u: &[S], up: &[S], vp: &[S], xp: &[S], yp: &[S]) -> Result<Vec<S>> {
        let k = self.d_slow;
        let c = |v: &[S]| -> Vec<Jet<S>> { v.iter().map(|&x| Jet::scalar(x, 1, k)).collect() };
        let f = self.u_residual(&Jet::variables(u, 1)?, &c(up), &c(vp), &c(xp), &c(yp))?;
        Ok((0..k * k).map(|n| f[n / k].grad(0, n % k)).collect())
    }

    /// Values of `u` solving `u₊ = u + ε ∂_{v₊} g(u, v₊, x(u), y₊)`.
    fn solve_u<S: Scalar>(&self, up: &[S], vp: &[S], xp: &[S], yp: &[S]) -> Result<Vec<S>> {
        let c = |v: &[S]| -> Vec<Jet<S>> { v.iter().map(|&x| Jet::scalar(x, 0, 0)).collect() };
        let (upj, vpj, xpj, ypj) = (c(up), c(vp), c(xp), c(yp));
        let k = self.d_slow;
        let mut u = up.to_vec();
        let scale = 1.0 + norm2(up);
        let mut last = f64::INFINITY;
        for it in 0..INNER_MAX_STEPS {
            let f: Vec<S> = self.u_residual(&c(&u), &upj, &vpj, &xpj, &ypj)?.iter().map(Jet::val).collect();
            let step = if it < INNER_FIXED_POINT_STEPS {
                f
            } else {
                Lu::new(&self.u_jacobian(&u, up, vp, xp, yp)?, k)?.solve(&f)
            };
            for (ui, s) in u.iter_mut().zip(&step) {
                *ui -= *s;
            }
            last = norm2(&step);
            if !last.is_finite() {
                break;
            }
            if last <= INNER_TOL * scale {
                return Ok(u);
            }
        }
        Err(Error::StepTooLarge { last_step: last })
    }

    /// `(w, z)` as jets, for jet arguments `(w₊, z₊)` of common shape.
    pub fn transform_jets<S: Scalar>(&self, wp: &[Jet<S>], zp: &[Jet<S>]) -> Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        let (k, n) = (self.d_slow, self.d_fast);
        if wp.len() != 2 * k || zp.len() != 2 * n {
            return Err(Error::dims("generating step applied with the wrong number of coordinates"));
        }
        let (up, vp) = wp.split_at(k);
        let (xp, yp) = zp.split_at(n);
        let (p, m) = (wp[0].order(), wp[0].dim_in());
        let val = |v: &[Jet<S>]| v.iter().map(Jet::val).collect::<Vec<S>>();
        let u0 = self.solve_u(&val(up), &val(vp), &val(xp), &val(yp))?;
        let mut u: Vec<Jet<S>> = u0.iter().map(|&x| Jet::scalar(x, p, m)).collect();
        if p > 0 {
            let jac = self.u_jacobian(&u0, &val(up), &val(vp), &val(xp), &val(yp))?;
            let jinv = Lu::new(&jac, k)?.inverse();
            for _ in 0..=p {
                let f = self.u_residual(&u, up, vp, xp, yp)?;
                u = (0..k)
                    .map(|a| {
                        let mut ua = u[a].clone();
                        for (b, fb) in f.iter().enumerate() {
                            ua = ua.try_sub(&fb.scale(jinv[a * k + b]))?;
                        }
                        Ok(ua)
                    })
                    .collect::<Result<_>>()?;
            }
        }
        let (zeta, x, g) = self.pieces(&u, vp, xp, yp, 0..k)?;
        let v: Vec<Jet<S>> = (0..k).map(|a| vp[a].try_add(&(&g[a] * self.eps))).collect::<Result<_>>()?;
        let y: Vec<Jet<S>> = (0..n).map(|i| yp[i].try_add(&zeta[n + i])).collect::<Result<_>>()?;
        Ok((u.into_iter().chain(v).collect(), x.into_iter().chain(y).collect()))
    }

    /// `(w, z)` from `(w₊, z₊)`.
    pub fn apply_generating_step<S: Scalar>(&self, wp: &[S], zp: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let c = |v: &[S]| -> Vec<Jet<S>> { v.iter().map(|&x| Jet::scalar(x, 0, 0)).collect() };
        let (w, z) = self.transform_jets(&c(wp), &c(zp))?;
        Ok((w.iter().map(Jet::val).collect(), z.iter().map(Jet::val).collect()))
    }

    /// `(w₊, z₊)` from `(w, z)`, solving for `(v₊, y₊)` by Newton's method.
    pub fn invert_generating_step(&self, w: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (k, n) = (self.d_slow, self.d_fast);
        let (u, v) = w.split_at(k);
        let (x, y) = z.split_at(n);
        let m = k + n;
        let mut q: Vec<f64> = v.iter().chain(y).copied().collect();
        let cst = |s: &[f64], p: usize| -> Vec<Jet<f64>> { s.iter().map(|&a| Jet::scalar(a, p, m)).collect() };
        for _ in 0..INNER_MAX_STEPS {
            let qj = Jet::variables(&q, 1)?;
            let (vpj, ypj) = qj.split_at(k);
            let what: Vec<Jet<f64>> = cst(u, 1).into_iter().chain(vpj.iter().cloned()).collect();
            let zeta = self.zeta.eval_at_jet(&what)?.components();
            let g = self.g_partials(&what, &cst(x, 1), ypj, 0..k)?;
            let mut f = Vec::with_capacity(m);
            for a in 0..k {
                f.push(vpj[a].try_add(&(&g[a] * self.eps))? - v[a]);
            }
            for i in 0..n {
                f.push(ypj[i].try_add(&zeta[n + i])? - y[i]);
            }
            let jac: Vec<f64> = (0..m * m).map(|r| f[r / m].grad(0, r % m)).collect();
            let step = Lu::new(&jac, m)?.solve(&f.iter().map(Jet::val).collect::<Vec<_>>());
            for (qi, s) in q.iter_mut().zip(&step) {
                *qi -= s;
            }
            if norm2(&step) <= INNER_TOL * (1.0 + norm2(&q)) {
                let (vp, yp) = q.split_at(k);
                let what: Vec<Jet<f64>> = cst(u, 0).into_iter().chain(cst(vp, 0)).collect();
                let zeta: Vec<f64> = self.zeta.eval_at_jet(&what)?.value().to_vec();
                let gv = self.g_partials(&what, &cst(x, 0), &cst(yp, 0), k..2 * k)?;
                let up: Vec<f64> = (0..k).map(|a| u[a] + self.eps * gv[a].val()).collect();
                let xp: Vec<f64> = (0..n).map(|i| x[i] - zeta[i]).collect();
                return Ok((up.into_iter().chain(vp.iter().copied()).collect(), xp.into_iter().chain(yp.iter().copied()).collect()));
            }
        }
        Err(Error::StepTooLarge { last_step: f64::NAN })
    }
}

/// Order-3 normal form of `H ∘ Ψ` at `(w₊, 0)`.
pub fn extract_normal_form(level: &HamLevel, layer: &SymplecticLayer, wp: &[f64]) -> Result<HamNormalForm> {
    let j = composed_z_jet(level, layer, wp)?;
    let d = level.fast_dim();
    Ok(HamNormalForm {
        h: j.val(),
        rho: (0..d).map(|i| j.grad(0, i)).collect(),
        a: (0..d * d).map(|n| j.hess(0, n / d, n % d)).collect(),
        t: triples(d).into_iter().map(|(i, k, l)| j.third(0, i, k, l)).collect(),
    })
}

fn composed_z_jet(level: &HamLevel, layer: &SymplecticLayer, wp: &[f64]) -> Result<Jet<f64>> {
    let d = level.fast_dim();
    let wj: Vec<Jet<f64>> = wp.iter().map(|&x| Jet::scalar(x, 3, d)).collect();
    let zj = Jet::variables(&vec![0.0; d], 3)?;
    let (w, z) = layer.transform_jets(&wj, &zj)?;
    level.eval(&w, &z)
}

/// Per-level certificate of the Hamiltonian refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamCertificate {
    pub level: usize,
    pub eps: f64,
    pub delta: f64,
    pub k: f64,
    pub c_r: f64,
    /// `sup ‖y₊‖ + sup ‖x‖` over the fast neighbourhood.
    pub c_d: f64,
    pub nu: f64,
    pub sigma: f64,
    pub xi: f64,
    pub kappa: f64,
    /// Measured gain `δ_n ξ_{n-1} / (ε δ_{n-1})`.
    pub c_delta: Option<f64>,
    /// The step was widened to `√(8 K C_D δ)`.
    pub sqrt_binds: bool,
    /// `ξ ≥ 2Kδ`.
    pub xi_ok: bool,
    /// `K C_D δ ≤ ξ² / 8`; reported, not enforced for the first step.
    pub g_ok: bool,
    /// `δ ≤ ⅓ K⁻² C_r⁻¹ κ³`.
    pub delta_ok: bool,
    pub hypothesis_ok: bool,
    pub interp_error: Option<f64>,
}

fn with_step_ham(mut c: HamCertificate, xi: f64) -> HamCertificate {
    c.xi = xi;
    c.kappa = c.sigma - xi;
    c.xi_ok = xi >= 2.0 * c.k * c.delta;
    c.g_ok = c.k * c.c_d * c.delta <= xi * xi / 8.0;
    c.delta_ok = c.kappa > 0.0 && (c.c_r == 0.0 || c.delta <= c.kappa.powi(3) / (3.0 * c.k * c.k * c.c_r));
    c.hypothesis_ok = c.xi_ok && c.delta_ok && c.kappa > 0.0 && c.nu - xi > 0.0;
    c
}

/// Sampled estimates for `level` on widths `(ν, σ)`.
pub fn certify_ham(system: &HamiltonianSystem, level: &HamLevel, index: usize, nu: f64, sigma: f64, sampler: &Sampler) -> Result<HamCertificate> {
    let d = level.fast_dim();
    let s = 2 * system.dofs().0;
    let slow = [system.slow_block(nu)?];
    let delta = sampler.sup(&slow, |w| level.rho(w).map(|r| norm2(&r)).map_err(|e| e.at(index, w)))?.value;
    let inv = sampler
        .sup(&slow, |w| {
            let (_, _, a) = level.normal_form(w).map_err(|e| e.at(index, w))?;
            let (n, cond) = linalg::inverse_norm(&a, d);
            if !cond.is_finite() || cond > linalg::SINGULAR_CONDITION {
                return Err(Error::SingularLinearPart { point: crate::error::to_pairs(w), condition: cond }.at(index, w));
            }
            Ok(n)
        })?
        .value;
    let joint = [system.slow_block(nu)?, system.fast_block(sigma)?];
    let c_r = sampler
        .sup(&joint, |p| {
            let (w, z) = p.split_at(s);
            level.remainder(w, z).map(|r| r.norm()).map_err(|e| e.at(index, w))
        })?
        .value;
    let fast = [system.fast_block(sigma)?];
    let n = d / 2;
    let sup_x = sampler.sup(&fast, |z| Ok(norm2(&z[..n])))?.value;
    let sup_y = sampler.sup(&fast, |z| Ok(norm2(&z[n..])))?.value;
    let k = 2.0 * inv;
    let c = HamCertificate {
        level: index,
        eps: system.eps(),
        delta,
        k,
        c_r,
        c_d: sup_y + sup_x + k * delta,
        nu,
        sigma,
        xi: 0.0,
        kappa: sigma,
        c_delta: None,
        sqrt_binds: false,
        xi_ok: false,
        g_ok: false,
        delta_ok: false,
        hypothesis_ok: false,
        interp_error: None,
    };
    Ok(with_step_ham(c, 0.0))
}

#[derive(Clone, Debug)]
pub struct HamRefineOptions {
    pub nu_floor: f64,
    pub sigma_floor: f64,
    pub xi0: f64,
    pub mode: StopMode,
    pub max_levels: usize,
    pub sampler: Sampler,
    /// Overrides the Chebyshev degree of bounded slow axes.
    pub degree: Option<usize>,
    pub interp_checks: usize,
}

impl HamRefineOptions {
    pub fn new(nu_floor: f64, sigma_floor: f64, xi0: f64) -> Self {
        HamRefineOptions {
            nu_floor,
            sigma_floor,
            xi0,
            mode: StopMode::Adaptive,
            max_levels: 60,
            sampler: Sampler::default(),
            degree: None,
            interp_checks: 8,
        }
    }
}

#[derive(Debug)]
pub struct HamOutcome {
    pub system: Arc<HamiltonianSystem>,
    /// `levels[n + 1]` is `levels[n] ∘ layers[n]`, cut to cubic order.
    pub levels: Vec<HamLevel>,
    pub layers: Vec<SymplecticLayer>,
    pub certificates: Vec<HamCertificate>,
    pub decay: DecayReport,
    pub halt: Halt,
    pub chosen_level: usize,
    pub m: Option<f64>,
    pub n_theory: Option<usize>,
    /// The first step violated `K C_D δ ≤ ξ₀² / 8`.
    pub first_step_g_binds: bool,
}

impl HamOutcome {
    pub fn final_level(&self) -> &HamLevel {
        self.levels.last().expect("at least the base level")
    }
}

/// Grid on which layers and models are tabulated.
pub fn table_axes(system: &HamiltonianSystem, degree: Option<usize>) -> Vec<Axis> {
    let axes = padded_axes(system.slow_axes(), system.nu0());
    match degree {
        Some(n) => axes.iter().map(|a| if a.is_periodic() { *a } else { a.with_resolution(n) }).collect(),
        None => axes,
    }
}

fn build_layer(system: &HamiltonianSystem, level: &HamLevel, axes: &[Axis], index: usize, opts: &HamRefineOptions) -> Result<(SymplecticLayer, f64)> {
    let (k, n) = system.dofs();
    let zeta = TensorTable::from_fn(axes, 2 * n, |w| {
        let pt: Vec<C64> = w.iter().map(|&x| C64::new(x, 0.0)).collect();
        Ok(solve_constrained_equilibria(level, w, SOLVER_TOL).map_err(|e| e.at(index, &pt))?.zeta)
    })?;
    let lo: Vec<f64> = axes.iter().map(|a| a.lo).collect();
    let hi: Vec<f64> = axes.iter().map(|a| a.hi).collect();
    let probe = Sampler { samples: opts.interp_checks, seed: opts.sampler.seed ^ index as u64 };
    let mut err = 0.0f64;
    for p in probe.points(&[Block::new(&lo, &hi, 0.0)?]).iter().rev().take(opts.interp_checks) {
        let w: Vec<f64> = p.iter().map(|c| c.re).collect();
        let direct = solve_constrained_equilibria(level, &w, SOLVER_TOL)?.zeta;
        let interp = zeta.eval(&w)?;
        err = err.max(norm2(&direct.iter().zip(&interp).map(|(a, b)| a - b).collect::<Vec<_>>()));
    }
    Ok((SymplecticLayer::new(system.eps(), k, n, zeta)?, err))
}

/// Tabulated cubic model of `level ∘ layer`.
pub fn compose_level(level: &HamLevel, layer: &SymplecticLayer, axes: &[Axis]) -> Result<CubicModel> {
    CubicModel::from_jets(axes, level.fast_dim(), |wp| composed_z_jet(level, layer, wp))
}

/// Big step `ξ₀`, then `ξ_n = 2ε max(c_δ, K_n, √(2 K_n C_D δ_n) / ε)`.
pub fn refine_ham(system: Arc<HamiltonianSystem>, opts: &HamRefineOptions) -> Result<HamOutcome> {
    let (nu0, sigma0, eps) = (system.nu0(), system.sigma0(), system.eps());
    if !(0.0 < opts.nu_floor && opts.nu_floor < nu0 - opts.xi0) {
        return Err(Error::invalid(format!("need 0 < nu_floor < nu0 - xi0 = {}", nu0 - opts.xi0)));
    }
    if !(0.0 < opts.sigma_floor && opts.sigma_floor < sigma0 - opts.xi0) {
        return Err(Error::invalid(format!("need 0 < sigma_floor < sigma0 - xi0 = {}", sigma0 - opts.xi0)));
    }
    let axes = table_axes(&system, opts.degree);
    let mut levels = vec![HamLevel::Base(system.clone())];
    let mut layers = Vec::new();
    let first = certify_ham(&system, &levels[0], 0, nu0, sigma0, &opts.sampler)?;
    let mut certs = vec![with_step_ham(first, opts.xi0)];
    let first_step_g_binds = !certs[0].g_ok;
    let (mut m, mut n_theory) = (None, None);
    let halt = loop {
        let cur = certs.last().expect("nonempty").clone();
        if cur.delta == 0.0 {
            break Halt::ZeroForcing;
        }
        if !cur.hypothesis_ok {
            break Halt::Hypothesis;
        }
        if layers.len() >= opts.max_levels {
            break Halt::MaxLevels;
        }
        let index = layers.len();
        let (layer, interp) = build_layer(&system, &levels[index], &axes, index, opts)?;
        let model = compose_level(&levels[index], &layer, &axes)?;
        layers.push(layer);
        levels.push(HamLevel::Model(model));
        let level = index + 1;
        let mut next = certify_ham(&system, &levels[level], level, cur.nu - cur.xi, cur.sigma - cur.xi, &opts.sampler)?;
        next.interp_error = Some(interp);
        let c_delta = next.delta * cur.xi / (eps * cur.delta);
        next.c_delta = Some(c_delta);
        let root = (2.0 * next.k * next.c_d * next.delta).sqrt() / eps;
        next.sqrt_binds = root > c_delta.max(next.k);
        let xi = 2.0 * eps * c_delta.max(next.k).max(root);
        next = with_step_ham(next, xi);
        if level == 1 {
            let mm = (next.nu - opts.nu_floor).min(next.sigma - opts.sigma_floor);
            m = Some(mm);
            n_theory = Some((mm / (4.0 * next.k * eps)).floor().max(0.0) as usize);
        }
        let stagnated = next.delta > STAGNATION * cur.delta;
        let floor = next.nu - next.xi < opts.nu_floor || next.sigma - next.xi < opts.sigma_floor;
        let exact = next.delta == 0.0;
        certs.push(next);
        if exact {
            break Halt::ZeroForcing;
        }
        match opts.mode {
            StopMode::FixedN if level > n_theory.unwrap_or(0) => break Halt::FixedCount,
            StopMode::Adaptive if stagnated => break Halt::Stagnation,
            _ if floor => break Halt::WidthFloor,
            _ => {}
        }
    };
    let chosen_level = match opts.mode {
        StopMode::FixedN => layers.len(),
        StopMode::Adaptive => {
            let mut best = 0;
            for (i, c) in certs.iter().enumerate() {
                if c.delta < certs[best].delta {
                    best = i;
                }
            }
            best
        }
    };
    levels.truncate(chosen_level + 1);
    layers.truncate(chosen_level);
    let trace = certs.iter().map(|c| (c.level, c.delta)).collect();
    let theory = match (m, certs.get(1)) {
        (Some(mm), Some(c1)) => Some(theory_slope(mm, c1.k, 1.0)),
        _ => None,
    };
    Ok(HamOutcome {
        system,
        levels,
        layers,
        decay: DecayReport::single(eps, trace, theory),
        certificates: certs,
        halt,
        chosen_level,
        m,
        n_theory,
        first_step_g_binds,
    })
}

/// `J = [[0, I], [−I, 0]]` of size `2n`.
fn standard_j(n: usize) -> Vec<f64> {
    let mut j = vec![0.0; 4 * n * n];
    for i in 0..n {
        j[i * 2 * n + n + i] = 1.0;
        j[(n + i) * 2 * n + i] = -1.0;
    }
    j
}

/// Matrix of `ω = dx∧dy + ε⁻¹ du∧dv` in the coordinates `(u, v, x, y)`.
pub fn omega_matrix(d_slow: usize, d_fast: usize, eps: f64) -> Vec<f64> {
    let (s, f) = (2 * d_slow, 2 * d_fast);
    let n = s + f;
    let mut om = vec![0.0; n * n];
    let (js, jf) = (standard_j(d_slow), standard_j(d_fast));
    for r in 0..s {
        for c in 0..s {
            om[r * n + c] = js[r * s + c] / eps;
        }
    }
    for r in 0..f {
        for c in 0..f {
            om[(s + r) * n + s + c] = jf[r * f + c];
        }
    }
    om
}

/// Richardson-extrapolated central-difference Jacobian of the step.
pub fn step_jacobian(layer: &SymplecticLayer, wp: &[f64], zp: &[f64], h: f64) -> Result<Vec<f64>> {
    let s = wp.len();
    let n = s + zp.len();
    let x0: Vec<f64> = wp.iter().chain(zp).copied().collect();
    let map = |x: &[f64]| -> Result<Vec<f64>> {
        let (w, z) = layer.apply_generating_step(&x[..s], &x[s..])?;
        Ok(w.into_iter().chain(z).collect())
    };
    let central = |c: usize, h: f64| -> Result<Vec<f64>> {
        let (mut a, mut b) = (x0.clone(), x0.clone());
        a[c] += h;
        b[c] -= h;
        let (fa, fb) = (map(&a)?, map(&b)?);
        Ok(fa.iter().zip(&fb).map(|(p, q)| (p - q) / (2.0 * h)).collect())
    };
    let mut jac = vec![0.0; n * n];
    for c in 0..n {
        let (d1, d2) = (central(c, h)?, central(c, 0.5 * h)?);
        for r in 0..n {
            jac[r * n + c] = (4.0 * d2[r] - d1[r]) / 3.0;
        }
    }
    Ok(jac)
}

/// Per-layer verification of the transform and of the stored model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub level: usize,
    /// `max |Dᵀ Ω D − Ω|`.
    pub symplectic_err: f64,
    /// `max |H_{n+1}(w₊, z₊) − H_n(Ψ(w₊, z₊))|`.
    pub energy_err: f64,
    /// `max |Ψ⁻¹(Ψ(p)) − p|` with an independent inverse.
    pub inverse_err: f64,
    pub points: usize,
}

/// `‖ρ_n(w_e)‖` at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinningReport {
    pub equilibrium: Vec<f64>,
    pub violations: Vec<f64>,
    pub max_violation: f64,
}

/// Check every layer of `outcome` at `points` random real points.
pub fn check_levels(outcome: &HamOutcome, points: usize, seed: u64) -> Result<Vec<LevelCheck>> {
    let sys = &outcome.system;
    let (k, n) = sys.dofs();
    let (slo, shi) = sys.slow_box();
    let (flo, fhi) = sys.fast_box();
    let omega = omega_matrix(k, n, sys.eps());
    let dim = 2 * k + 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, layer) in outcome.layers.iter().enumerate() {
        let mut c = LevelCheck { level: i, symplectic_err: 0.0, energy_err: 0.0, inverse_err: 0.0, points };
        for _ in 0..points {
            let wp: Vec<f64> = slo.iter().zip(&shi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
            let zp: Vec<f64> = flo.iter().zip(fhi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
            let d = step_jacobian(layer, &wp, &zp, 1e-3)?;
            let dt_om = linalg::mat_mul(&transpose(&d, dim), &omega, dim, dim, dim);
            let res = linalg::mat_mul(&dt_om, &d, dim, dim, dim);
            let e = res.iter().zip(&omega).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            c.symplectic_err = c.symplectic_err.max(e);

            let (w, z) = layer.apply_generating_step(&wp, &zp)?;
            let (wb, zb) = layer.invert_generating_step(&w, &z)?;
            let back = wb.iter().zip(&wp).chain(zb.iter().zip(&zp)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            c.inverse_err = c.inverse_err.max(back);

            let zs: Vec<f64> = zp.iter().map(|x| x * ENERGY_PROBE_SCALE).collect();
            let (w, z) = layer.apply_generating_step(&wp, &zs)?;
            let before = outcome.levels[i].value(&w, &z)?;
            let after = outcome.levels[i + 1].value(&wp, &zs)?;
            c.energy_err = c.energy_err.max((after - before).abs());
        }
        out.push(c);
    }
    Ok(out)
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    (0..n * n).map(|r| a[(r % n) * n + r / n]).collect()
}

/// `‖ρ_n(w_e)‖` for all levels; the equilibrium keeps its slow coordinates
/// because every layer vanishes there.
pub fn check_equilibrium_pinned(levels: &[HamLevel], w_e: &[f64]) -> Result<PinningReport> {
    let violations: Vec<f64> = levels.iter().map(|l| l.rho(w_e).map(|r| norm2(&r))).collect::<Result<_>>()?;
    let max_violation = violations.iter().copied().fold(0.0, f64::max);
    Ok(PinningReport { equilibrium: w_e.to_vec(), violations, max_violation })
}

/// Stability report along a trajectory started on the refined manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub eps: f64,
    pub horizon: f64,
    pub step: f64,
    pub sup_z: f64,
    /// Range of `L / ‖z‖²` over the trajectory, `L = ½⟨A z, z⟩ + r`.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// `½ λ_min(A)` and `½ λ_max(A)` over the real slow box.
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub final_w: Vec<f64>,
}

/// Integrate Hamilton's equations of a tabulated level from `(w0, 0)` over
/// fast time `horizon` and record `‖z(t)‖` and the Lyapunov ratio.
pub fn lyapunov_monitor(system: &HamiltonianSystem, level: &HamLevel, w0: &[f64], horizon: f64, step: f64) -> Result<LyapunovReport> {
    let model = match level {
        HamLevel::Model(m) => m,
        HamLevel::Base(_) => return Err(Error::Inapplicable("the monitor runs on a refined (tabulated) level".into())),
    };
    let (k, n) = system.dofs();
    let d = 2 * n;
    let eps = system.eps();
    let (lo, hi) = system.slow_box();
    let grid = Sampler { samples: 256, seed: 1 }.points(&[Block::new(&lo, &hi, 0.0)?]);
    let (mut lam_lo, mut lam_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &grid {
        let w: Vec<f64> = p.iter().map(|c| c.re).collect();
        let a = model.coefficients(&w)?.a;
        if !linalg::is_positive_definite(&a, d, PD_TOL) {
            return Err(Error::Inapplicable(format!("A is not positive definite at w = {w:?}")));
        }
        let ev = linalg::symmetric_eigenvalues(&a, d);
        lam_lo = lam_lo.min(0.5 * ev[0]);
        lam_hi = lam_hi.max(0.5 * ev[d - 1]);
    }
    let (jw, jz) = (standard_j(k), standard_j(n));
    let rhs = |_: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (w, z) = y.split_at(2 * k);
        let (gw, gz) = model.gradient(w, z)?;
        let mut out: Vec<f64> = linalg::mat_vec(&jw, 2 * k, 2 * k, &gw).into_iter().map(|v| eps * v).collect();
        out.extend(linalg::mat_vec(&jz, d, d, &gz));
        Ok(out)
    };
    let y0: Vec<f64> = w0.iter().copied().chain(std::iter::repeat_n(0.0, d)).collect();
    let steps = (horizon / step).ceil() as usize;
    let (mut sup_z, mut rmin, mut rmax) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    let mut failure = None;
    let last = ode::rk4(rhs, 0.0, &y0, step, steps, |_, y| {
        let (w, z) = y.split_at(2 * k);
        let nz = norm2(z);
        sup_z = sup_z.max(nz);
        if nz > 0.0 {
            match model.energy_split(w, z) {
                Ok((_, l)) => {
                    let r = l / (nz * nz);
                    rmin = rmin.min(r);
                    rmax = rmax.max(r);
                }
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(LyapunovReport {
        eps,
        horizon,
        step,
        sup_z,
        ratio_min: rmin,
        ratio_max: rmax,
        lambda_lo: lam_lo,
        lambda_hi: lam_hi,
        final_w: last[..2 * k].to_vec(),
    })
}
