//! Built-in systems with closed-form reference values.
//!
//! | name | kind | slow | fast |
//! |---|---|---|---|
//! | `counterexample` | general | `ẇ = εf(w)` | `ż = εw − z` |
//! | `linear_hyperbolic` | general | `f(w) = w` | as above |
//! | `neishtadt` | Hamiltonian | `v` (or `½v² + 1 − cos u`) | `½(x² + y²) + εy f(u)` |
//! | `elliptic_pendulum` | Hamiltonian | pendulum | one oscillator |
//! | `two_fast_modes` | Hamiltonian | pendulum | oscillators at 1 and √2 |
//!
//! For `neishtadt`, `f(u) = Σ_{k ≤ N_f} e^{-k} sin(ku)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::norms::Sampler;
use crate::refine_ham::{solve_constrained_equilibria, HamLevel};
use crate::scalar::Scalar;
use crate::sysmodel::{
    Chart, ChartMode, GeneralSpec, GeneralSystem, HamiltonianFn, HamiltonianSpec, HamiltonianSystem, SlowFastField,
};
use crate::table::Axis;

pub const SYSTEMS: [&str; 5] = ["counterexample", "linear_hyperbolic", "neishtadt", "elliptic_pendulum", "two_fast_modes"];

pub const DEFAULT_TERMS: usize = 30;
/// Tolerance of the registration self-check.
pub const SELF_CHECK_TOL: f64 = 1e-12;
pub const SELF_CHECK_POINTS: usize = 20;

/// Optional knobs of the built-in systems; absent fields take per-system defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExampleParams {
    /// Ascending polynomial coefficients of `f` (`counterexample` only).
    pub f: Option<Vec<f64>>,
    /// Series length `N_f` (`neishtadt` only).
    pub n_terms: Option<usize>,
    /// Adds a slow potential with a critical point at the origin (`neishtadt` only).
    pub pinned: bool,
    /// Chebyshev degree of bounded slow axes.
    pub degree: Option<usize>,
    pub nu0: Option<f64>,
    pub sigma0: Option<f64>,
    /// Strength of the slow forcing of the oscillators (pendulum systems only).
    pub coupling: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum BuiltSystem {
    General(Arc<GeneralSystem>),
    Hamiltonian(Arc<HamiltonianSystem>),
}

impl BuiltSystem {
    pub fn name(&self) -> &str {
        match self {
            BuiltSystem::General(s) => &s.name,
            BuiltSystem::Hamiltonian(s) => &s.name,
        }
    }
}

fn poly<S: Scalar>(c: &[f64], w: &Jet<S>) -> Jet<S> {
    let mut acc = w.cst(0.0);
    for &a in c.iter().rev() {
        acc = (&acc * w) + a;
    }
    acc
}

fn poly_val(c: &[f64], w: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * w + a)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect()
}

/// `ẇ = f(w)` (times ε), `ż = εw − z`.
#[derive(Clone, Debug)]
pub struct Counterexample {
    pub f: Vec<f64>,
    pub eps: f64,
}

impl SlowFastField for Counterexample {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        let zdot = (&w[0] * self.eps).try_sub(&z[0])?;
        Ok((vec![poly(&self.f, &w[0])], vec![zdot]))
    }
}

/// `½(x² + y²) + εy f(u)` plus `v` or the pendulum `½v² + 1 − cos u`.
#[derive(Clone, Debug)]
pub struct Neishtadt {
    pub eps: f64,
    pub n_terms: usize,
    pub pinned: bool,
}

impl Neishtadt {
    fn f<S: Scalar>(&self, u: &Jet<S>) -> Jet<S> {
        let mut acc = u.cst(0.0);
        for k in 1..=self.n_terms {
            acc = acc + (u * k as f64).sin() * (-(k as f64)).exp();
        }
        acc
    }

    /// `f^{(m)}(u)` for real `u`.
    pub fn f_deriv(&self, u: f64, m: u32) -> f64 {
        (1..=self.n_terms)
            .map(|k| {
                let k = k as f64;
                let phase = k * u + m as f64 * PI / 2.0;
                (-k).exp() * k.powi(m as i32) * phase.sin()
            })
            .sum()
    }
}

impl HamiltonianFn for Neishtadt {
    fn dofs(&self) -> (usize, usize) {
        (1, 1)
    }
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<Jet<S>> {
        let (u, v) = (&w[0], &w[1]);
        let (x, y) = (&z[0], &z[1]);
        let slow = if self.pinned { v.square() * 0.5 + 1.0 - u.cos() } else { v.clone() };
        let osc = (x.square() + y.square()) * 0.5;
        Ok(slow + osc + y.try_mul(&self.f(u))? * self.eps)
    }
}

/// Stiffening of the first oscillator with the pendulum angle.
const STIFFENING: f64 = 0.3;

/// A pendulum driving one or two fast oscillators.
#[derive(Clone, Debug)]
pub struct PendulumOscillators {
    pub eps: f64,
    pub coupling: f64,
    pub two_modes: bool,
}

pub const DEFAULT_COUPLING: f64 = 0.15;

impl HamiltonianFn for PendulumOscillators {
    fn dofs(&self) -> (usize, usize) {
        (1, if self.two_modes { 2 } else { 1 })
    }
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<Jet<S>> {
        let (u, v) = (&w[0], &w[1]);
        let n = z.len() / 2;
        let (x1, y1) = (&z[0], &z[n]);
        let pot = u.cos().cst(1.0) - u.cos();
        let mut h = v.square() * 0.5 + &pot;
        h = h + (pot * STIFFENING + 1.0) * x1.square() * 0.5 + y1.square() * 0.5;
        let c = self.eps * self.coupling;
        h = h + (x1.try_mul(&u.sin())? + y1.try_mul(v)?) * c;
        if self.two_modes {
            let (x2, y2) = (&z[1], &z[3]);
            h = h + (x2.square() + y2.square()) * (0.5 * 2f64.sqrt());
            h = h + (x2.try_mul(&u.sin())? - y2.try_mul(v)?) * c;
        }
        Ok(h)
    }
}

/// Periodic axis of period `2π` whose nodes are symmetric about 0.
pub fn symmetric_periodic(modes: usize) -> Axis {
    let lo = -(modes as f64) * 2.0 * PI / (2 * modes + 1) as f64;
    Axis::periodic(lo, lo + 2.0 * PI, modes)
}

/// Bound `e^{-N_f} / (1 − e^{-1})` on the neglected tail `Σ_{k > N_f} e^{-k}` of the `neishtadt` series.
pub fn neishtadt_tail_bound(n_terms: usize) -> f64 {
    (-(n_terms as f64)).exp() / (1.0 - (-1f64).exp())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

fn general_f(name: &str, params: &ExampleParams) -> Result<Vec<f64>> {
    match name {
        "linear_hyperbolic" => Ok(vec![0.0, 1.0]),
        _ => {
            let f = params.f.clone().unwrap_or_else(|| vec![-1.0, 1.0]);
            if f.is_empty() || f.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("f needs at least one finite coefficient"));
            }
            Ok(f)
        }
    }
}

fn n_terms(params: &ExampleParams) -> Result<usize> {
    let n = params.n_terms.unwrap_or(DEFAULT_TERMS);
    if n < 1 {
        return Err(Error::invalid("n_terms must be at least 1"));
    }
    Ok(n)
}

/// Construct a named system.
pub fn build(name: &str, eps: f64, params: &ExampleParams, sampler: &Sampler) -> Result<BuiltSystem> {
    check_eps(eps)?;
    match name {
        "counterexample" | "linear_hyperbolic" => {
            let f = general_f(name, params)?;
            let (lo, hi) = if name == "counterexample" { (0.0, 2.0) } else { (-1.0, 1.0) };
            let spec = GeneralSpec {
                name: name.into(),
                field: Arc::new(Counterexample { f, eps }),
                eps,
                slow_axes: vec![Axis::chebyshev(lo, hi, params.degree.unwrap_or(24))],
                fast_lo: vec![-1.0],
                fast_hi: vec![1.0],
                nu0: params.nu0.unwrap_or(1.0),
                sigma0: params.sigma0.unwrap_or(1.0),
            };
            Ok(BuiltSystem::General(Arc::new(GeneralSystem::new(spec, sampler)?)))
        }
        "neishtadt" => {
            let ham = Neishtadt { eps, n_terms: n_terms(params)?, pinned: params.pinned };
            let v_degree = params.degree.unwrap_or(if params.pinned { 16 } else { 2 });
            let nu0 = params.nu0.unwrap_or(0.7);
            let spec = HamiltonianSpec {
                name: name.into(),
                ham: Arc::new(ham),
                eps,
                slow_axes: vec![symmetric_periodic(64), Axis::chebyshev(-1.0, 1.0, v_degree)],
                fast_lo: vec![-0.25; 2],
                fast_hi: vec![0.25; 2],
                nu0,
                sigma0: params.sigma0.unwrap_or(nu0),
                equilibrium: params.pinned.then(|| vec![0.0, 0.0]),
            };
            Ok(BuiltSystem::Hamiltonian(Arc::new(HamiltonianSystem::new(spec)?)))
        }
        "elliptic_pendulum" | "two_fast_modes" => {
            let two = name == "two_fast_modes";
            let deg = params.degree.unwrap_or(if two { 16 } else { 24 });
            let nf = if two { 4 } else { 2 };
            let nu0 = params.nu0.unwrap_or(0.8);
            let spec = HamiltonianSpec {
                name: name.into(),
                ham: Arc::new(PendulumOscillators { eps, coupling: params.coupling.unwrap_or(DEFAULT_COUPLING), two_modes: two }),
                eps,
                slow_axes: vec![Axis::chebyshev(-1.0, 1.0, deg); 2],
                fast_lo: vec![-0.25; nf],
                fast_hi: vec![0.25; nf],
                nu0,
                sigma0: params.sigma0.unwrap_or(nu0),
                equilibrium: Some(vec![0.0, 0.0]),
            };
            Ok(BuiltSystem::Hamiltonian(Arc::new(HamiltonianSystem::new(spec)?)))
        }
        other => Err(Error::UnknownSystem(other.into())),
    }
}

/// Floors and first step that keep the default domains admissible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineDefaults {
    pub nu_floor: f64,
    pub sigma_floor: f64,
    pub xi0: f64,
}

pub fn default_refine(name: &str) -> Result<RefineDefaults> {
    let xi0 = match name {
        "counterexample" | "linear_hyperbolic" | "neishtadt" => 0.3,
        "elliptic_pendulum" | "two_fast_modes" => 0.25,
        other => return Err(Error::UnknownSystem(other.into())),
    };
    Ok(RefineDefaults { nu_floor: 0.02, sigma_floor: 0.02, xi0 })
}

/// Reference quantities available for `name`.
pub fn quantities(name: &str, params: &ExampleParams) -> Result<&'static [&'static str]> {
    match name {
        "counterexample" => Ok(&["zeta0", "rho1", "zeta1", "rho2"]),
        "linear_hyperbolic" => Ok(&["zeta0", "rho1", "zeta1", "rho2", "manifold_slope"]),
        "neishtadt" if params.pinned => Ok(&["zeta0", "rho0", "rho1"]),
        "neishtadt" => Ok(&["zeta0", "rho0", "rho1", "rho2", "rho3"]),
        "elliptic_pendulum" | "two_fast_modes" => Ok(&[]),
        other => Err(Error::UnknownSystem(other.into())),
    }
}

/// Closed-form value of `quantity` for `name` at the slow point `point`.
pub fn oracle(name: &str, quantity: &str, eps: f64, params: &ExampleParams, point: &[f64]) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let unavailable = || Error::UnavailableQuantity { system: name.into(), quantity: quantity.into() };
    if !quantities(name, params)?.contains(&quantity) {
        return Err(unavailable());
    }
    match name {
        "counterexample" | "linear_hyperbolic" => {
            let f = general_f(name, params)?;
            let w = *point.first().ok_or_else(|| Error::dims("oracle needs a slow point"))?;
            let (fw, dfw) = (poly_val(&f, w), poly_val(&poly_deriv(&f), w));
            let v = match quantity {
                "zeta0" => eps * w,
                "rho1" | "zeta1" => -eps * eps * fw,
                "rho2" => eps.powi(3) * dfw * fw,
                "manifold_slope" => eps / (1.0 + eps),
                _ => return Err(unavailable()),
            };
            Ok(vec![v])
        }
        "neishtadt" => {
            if point.len() != 2 {
                return Err(Error::dims("neishtadt oracles take (u, v)"));
            }
            let n = Neishtadt { eps, n_terms: n_terms(params)?, pinned: params.pinned };
            let (u, v) = (point[0], point[1]);
            let d = |m| n.f_deriv(u, m);
            match quantity {
                "zeta0" => Ok(vec![0.0, -eps * d(0)]),
                "rho0" => Ok(vec![0.0, eps * d(0)]),
                "rho1" if params.pinned => Ok(vec![-eps * eps * d(1) * v, 0.0]),
                "rho1" => Ok(vec![-eps * eps * d(1), 0.0]),
                "rho2" => Ok(vec![0.0, -eps.powi(3) * d(2)]),
                "rho3" => Ok(vec![eps.powi(4) * d(3), 0.0]),
                _ => Err(unavailable()),
            }
        }
        _ => Err(unavailable()),
    }
}

/// Compare every oracle that the builder can reproduce cheaply at
/// [`SELF_CHECK_POINTS`] random points; returns the largest deviation.
pub fn self_check(name: &str, eps: f64, params: &ExampleParams, sampler: &Sampler, seed: u64) -> Result<f64> {
    let sys = build(name, eps, params, sampler)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut note = |got: &[f64], want: &[f64]| {
        for (a, b) in got.iter().zip(want) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    };
    match &sys {
        BuiltSystem::General(g) => {
            let mut chart = Chart::new(g.clone(), ChartMode::Lazy);
            chart.push_lazy()?;
            chart.push_lazy()?;
            let (lo, hi) = g.slow_box();
            for _ in 0..SELF_CHECK_POINTS {
                let w = [rng.gen_range(lo[0]..hi[0])];
                note(&g.zeroth_order_manifold(&w)?, &oracle(name, "zeta0", eps, params, &w)?);
                note(&chart.view(1)?.rho(&w)?, &oracle(name, "rho1", eps, params, &w)?);
                note(&chart.view(2)?.rho(&w)?, &oracle(name, "rho2", eps, params, &w)?);
                if name == "linear_hyperbolic" {
                    let c = oracle(name, "manifold_slope", eps, params, &w)?[0];
                    let (wv, zv) = g.fields(&Jet::variables(&w, 0)?, &[Jet::scalar(c * w[0], 0, 1)])?;
                    let residual = zv[0].val() - c * g.eps_norm() * wv[0].val();
                    note(&[residual], &[0.0]);
                }
            }
        }
        BuiltSystem::Hamiltonian(h) => {
            if quantities(name, params)?.is_empty() {
                return Ok(0.0);
            }
            let level = HamLevel::Base(h.clone());
            let (lo, hi) = h.slow_box();
            for _ in 0..SELF_CHECK_POINTS {
                let w: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
                let zeta = solve_constrained_equilibria(&level, &w, 1e-15)?.zeta;
                note(&zeta, &oracle(name, "zeta0", eps, params, &w)?);
                note(&level.rho(&w)?, &oracle(name, "rho0", eps, params, &w)?);
            }
        }
    }
    if worst > SELF_CHECK_TOL {
        return Err(Error::AssumptionViolated(format!("{name}: oracle self-check deviates by {worst:e}")));
    }
    Ok(worst)
}
