//! Graph refinement of general slow-fast systems: per-point contraction
//! solves for each layer, certificate recursion and optimal truncation.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::linalg::{self, checked_lu};
use crate::norms::{theory_slope, Block, DecayReport, Sampler};
use crate::scalar::{norm2, Scalar};
use crate::sysmodel::{Certificate, Chart, ChartMode, GeneralSystem, NormalFormView};
use crate::table::TensorTable;

/// Relative tolerance of the layer solve: steps stop below `SOLVER_TOL · max(1, ‖ρ‖)`.
pub const SOLVER_TOL: f64 = 1e-13;
pub const MAX_CONTRACTION_STEPS: usize = 200;
/// Adaptive refinement stops once `δ_{n+1} > STAGNATION · δ_n`.
pub const STAGNATION: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct LayerSolveResult<S> {
    /// Jet of `ζ` in `w`.
    pub zeta: Jet<S>,
    pub iterations: usize,
    /// `‖ρ + Aζ + R(w, ζ)‖` at exit.
    pub residual: f64,
    /// `‖A⁻¹ ∂_z R(w, ζ)‖`.
    pub contraction_est: f64,
}

fn points_c64<S: Scalar>(w: &[S]) -> Vec<C64> {
    w.iter().map(|x| x.to_c64()).collect()
}

/// Solve `ρ(w) + A(w) ζ + R(w, ζ) = 0` by the contraction
/// `ζ ← −A⁻¹(ρ + R(w, ζ))` from `ζ₀ = −A⁻¹ρ`, then differentiate implicitly
/// up to `order`.
pub fn solve_layer<S: Scalar>(view: &NormalFormView<'_>, w: &[S], tol: f64, order: usize) -> Result<LayerSolveResult<S>> {
    if !(tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let pt = points_c64(w);
    let d_z = view.system().dims().1;
    let (rho, a) = view.rho_and_a(w)?;
    let lu = checked_lu(&a, d_z, &pt)?;
    let rho_norm = norm2(&rho);
    let tol_abs = tol * rho_norm.max(1.0);
    let a_norm = linalg::op_norm(&a, d_z, d_z);
    let mut zeta: Vec<S> = lu.solve(&rho).into_iter().map(|x| -x).collect();
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    loop {
        let zn = view.z_at(w, &zeta)?;
        let residual = norm2(&zn);
        if residual <= tol_abs * a_norm.max(1.0) || last_step < tol_abs {
            break;
        }
        if iterations == MAX_CONTRACTION_STEPS {
            let est = contraction(view, w, &zeta, &a, &lu).unwrap_or(f64::NAN);
            return Err(Error::NonContraction { iterations, contraction_est: est, last_step });
        }
        // ζ_new = −A⁻¹(ρ + R(ζ)) = ζ − A⁻¹ Z_n(w, ζ)
        let step = lu.solve(&zn);
        for (z, s) in zeta.iter_mut().zip(&step) {
            *z -= *s;
        }
        last_step = norm2(&step);
        iterations += 1;
        if !last_step.is_finite() {
            return Err(Error::NonFinite("layer solve".into()));
        }
    }
    let residual = norm2(&view.z_at(w, &zeta)?);
    let contraction_est = contraction(view, w, &zeta, &a, &lu)?;
    let zeta_jet = if order == 0 {
        Jet::constant(&zeta, 0, w.len())?
    } else {
        implicit_jet(view, w, &zeta, order)?
    };
    Ok(LayerSolveResult { zeta: zeta_jet, iterations, residual, contraction_est })
}

fn contraction<S: Scalar>(view: &NormalFormView<'_>, w: &[S], zeta: &[S], a: &[S], lu: &linalg::Lu<S>) -> Result<f64> {
    let n = zeta.len();
    let (_, m) = view.linearize(w, zeta)?;
    let dr: Vec<S> = m.iter().zip(a).map(|(x, y)| *x - *y).collect();
    let inv = lu.inverse();
    Ok(linalg::op_norm(&linalg::mat_mul(&inv, &dr, n, n, n), n, n))
}

/// Newton iteration in jet arithmetic with the exact Jacobian at the root:
/// each sweep fixes one more order of the Taylor coefficients of `ζ(w)`.
fn implicit_jet<S: Scalar>(view: &NormalFormView<'_>, w: &[S], zeta: &[S], order: usize) -> Result<Jet<S>> {
    let n = zeta.len();
    let (_, m) = view.linearize(w, zeta)?;
    let minv = checked_lu(&m, n, &points_c64(w))?.inverse();
    let wj = Jet::variables(w, order)?;
    let mut zj: Vec<Jet<S>> = zeta.iter().map(|&z| Jet::scalar(z, order, w.len())).collect();
    for _ in 0..=order {
        let (_, f) = view.fields(&wj, &zj)?;
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut zi = zj[i].clone();
            for (k, fk) in f.iter().enumerate() {
                zi = zi.try_sub(&fk.scale(minv[i * n + k]))?;
            }
            next.push(zi);
        }
        zj = next;
    }
    Jet::stack(&zj)
}

/// Sampled estimates for level `view.level()` on widths `(ν, σ)`, with the
/// hypotheses evaluated for a step of width `ξ`.
pub fn certify(view: &NormalFormView<'_>, nu: f64, sigma: f64, xi: f64, sampler: &Sampler) -> Result<Certificate> {
    let sys = view.system();
    let level = view.level();
    let d_z = sys.dims().1;
    let slow = [sys.slow_block(nu)?];
    let delta = sampler
        .sup(&slow, |w| view.rho(w).map(|r| norm2(&r)).map_err(|e| e.at(level, w)))?
        .value;
    let inv = sampler
        .sup(&slow, |w| {
            let a = view.a_matrix(w).map_err(|e| e.at(level, w))?;
            let (n, cond) = linalg::inverse_norm(&a, d_z);
            if !cond.is_finite() || cond > linalg::SINGULAR_CONDITION {
                return Err(Error::SingularLinearPart { point: crate::error::to_pairs(w), condition: cond }.at(level, w));
            }
            Ok(n)
        })?
        .value;
    let d_w = sys.dims().0;
    let joint = [sys.slow_block(nu)?, sys.fast_block(sigma)?];
    let c_r = sampler
        .sup(&joint, |p| {
            let (w, z) = p.split_at(d_w);
            view.remainder(w, z).map(|r| norm2(&r)).map_err(|e| e.at(level, w))
        })?
        .value;
    let c_z = sampler.sup(&[sys.fast_block(sys.sigma0())?], |z| Ok(norm2(z)))?.value;
    let eps_norm = sys.eps_norm();
    let cert = Certificate {
        level,
        eps: sys.eps(),
        eps_norm,
        delta,
        k: 2.0 * inv,
        c_r,
        c_z,
        nu,
        sigma,
        xi,
        kappa: sigma - xi,
        delta_over_eps: delta / eps_norm,
        xi_ok: false,
        delta_ok: false,
        eps_ok: false,
        hypothesis_ok: false,
        ratio_exceeded: false,
        interp_error: None,
    };
    Ok(with_step(cert, xi))
}

/// Re-evaluate the step hypotheses for step width `xi`.
pub fn with_step(mut c: Certificate, xi: f64) -> Certificate {
    c.xi = xi;
    c.kappa = c.sigma - xi;
    let k2 = c.kappa * c.kappa;
    c.xi_ok = xi >= 2.0 * c.k * c.delta;
    c.delta_ok = c.kappa > 0.0 && (c.c_r == 0.0 || c.delta <= 0.5 * k2 / (c.k * c.k * c.c_r));
    c.eps_ok = c.eps_norm < 2.0 * k2;
    c.hypothesis_ok = c.xi_ok && c.delta_ok && c.eps_ok && c.kappa > 0.0 && c.nu - xi > 0.0;
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopMode {
    /// `N = ⌊m / (4 K₁ ε)⌋` small steps.
    FixedN,
    /// Until δ stagnates, a hypothesis fails or the widths run out; the
    /// chart is cut back to the level of smallest δ.
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Halt {
    /// ρ vanishes identically: the initial graph is invariant.
    ZeroForcing,
    Hypothesis,
    Stagnation,
    WidthFloor,
    FixedCount,
    MaxLevels,
}

#[derive(Clone, Debug)]
pub struct RefineOptions {
    pub nu_floor: f64,
    pub sigma_floor: f64,
    pub xi0: f64,
    pub mode: StopMode,
    pub chart_mode: ChartMode,
    /// Chebyshev degree of tabulated layers (bounded axes).
    pub degree: usize,
    pub max_levels: usize,
    pub sampler: Sampler,
    pub tol: f64,
    /// Off-grid points per level used to measure interpolation error.
    pub interp_checks: usize,
}

impl RefineOptions {
    pub fn new(nu_floor: f64, sigma_floor: f64, xi0: f64) -> Self {
        RefineOptions {
            nu_floor,
            sigma_floor,
            xi0,
            mode: StopMode::Adaptive,
            chart_mode: ChartMode::Tabulated,
            degree: 32,
            max_levels: 60,
            sampler: Sampler::default(),
            tol: SOLVER_TOL,
            interp_checks: 8,
        }
    }
}

#[derive(Debug)]
pub struct RefineOutcome {
    pub chart: Chart,
    pub certificates: Vec<Certificate>,
    pub decay: DecayReport,
    pub halt: Halt,
    /// Level whose chart is returned.
    pub chosen_level: usize,
    /// `m = min(ν₁ − ν̲, σ₁ − σ̲)` once the big step is taken.
    pub m: Option<f64>,
    /// `⌊m / (4 K₁ ε)⌋`.
    pub n_theory: Option<usize>,
}

impl RefineOutcome {
    pub fn hypothesis_ok(&self) -> bool {
        self.halt != Halt::Hypothesis
    }
}

/// Result of one refinement step.
#[derive(Clone, Debug)]
pub enum Step {
    Advanced(Certificate),
    /// Hypotheses fail for the requested step; nothing was appended.
    Halted(Certificate),
}

fn tabulate_layer(chart: &Chart, level: usize, opts: &RefineOptions) -> Result<(TensorTable, f64)> {
    let view = chart.view(level)?;
    let axes = chart.table_axes().to_vec();
    let d_z = chart.system().dims().1;
    let table = TensorTable::from_fn(&axes, d_z, |w| {
        let r = solve_layer(&view, w, opts.tol, 0).map_err(|e| e.at(level, &points_c64(w)))?;
        Ok(r.zeta.value().to_vec())
    })?;
    let lo: Vec<f64> = axes.iter().map(|a| a.lo).collect();
    let hi: Vec<f64> = axes.iter().map(|a| a.hi).collect();
    let probes = Sampler { samples: opts.interp_checks, seed: opts.sampler.seed ^ level as u64 }.points(&[Block::new(&lo, &hi, 0.0)?]);
    let mut err = 0.0f64;
    for p in probes.iter().rev().take(opts.interp_checks) {
        let w: Vec<f64> = p.iter().map(|c| c.re).collect();
        let direct = solve_layer(&view, &w, opts.tol, 0)?.zeta;
        let interp = table.eval(&w)?;
        let diff: Vec<f64> = direct.value().iter().zip(&interp).map(|(a, b)| a - b).collect();
        err = err.max(norm2(&diff));
    }
    Ok((table, err))
}

/// Append layer `n` to the chart and certify level `n + 1` on the shrunken
/// widths. `cert` is the certificate of the current last level.
pub fn iterate_step(chart: &mut Chart, cert: &Certificate, opts: &RefineOptions) -> Result<Step> {
    if !cert.hypothesis_ok {
        return Ok(Step::Halted(cert.clone()));
    }
    let level = chart.len();
    if cert.level != level {
        return Err(Error::invalid(format!("certificate for level {} but chart has {level} layers", cert.level)));
    }
    let mut interp = None;
    match chart.mode() {
        ChartMode::Lazy => chart.push_lazy()?,
        ChartMode::Tabulated => {
            let (t, e) = tabulate_layer(chart, level, opts)?;
            chart.push_table(t)?;
            interp = Some(e);
        }
    }
    let (nu, sigma) = (cert.nu - cert.xi, cert.sigma - cert.xi);
    let mut next = certify(&chart.view(level + 1)?, nu, sigma, 0.0, &opts.sampler)?;
    next = with_step(next.clone(), 2.0 * next.k * next.eps_norm);
    next.interp_error = interp;
    next.ratio_exceeded = cert.delta > 0.0 && next.delta / cert.delta > cert.eps_norm * cert.k / cert.xi;
    Ok(Step::Advanced(next))
}

/// Big step of width `ξ₀`, then small steps `ξ_n = 2 K_n ε`.
pub fn refine(system: Arc<GeneralSystem>, opts: &RefineOptions) -> Result<RefineOutcome> {
    let (nu0, sigma0) = (system.nu0(), system.sigma0());
    if !(0.0 < opts.nu_floor && opts.nu_floor < nu0 - opts.xi0) {
        return Err(Error::invalid(format!("need 0 < nu_floor < nu0 - xi0 = {}", nu0 - opts.xi0)));
    }
    if !(0.0 < opts.sigma_floor && opts.sigma_floor < sigma0 - opts.xi0) {
        return Err(Error::invalid(format!("need 0 < sigma_floor < sigma0 - xi0 = {}", sigma0 - opts.xi0)));
    }
    let mut chart = Chart::new(system.clone(), opts.chart_mode);
    chart.set_resolution(opts.degree);
    let mut certs = vec![certify(&chart.view(0)?, nu0, sigma0, opts.xi0, &opts.sampler)?];
    let mut m = None;
    let mut n_theory = None;
    let halt = loop {
        let cur = certs.last().expect("nonempty").clone();
        if cur.delta == 0.0 {
            break Halt::ZeroForcing;
        }
        if !cur.hypothesis_ok {
            break Halt::Hypothesis;
        }
        if chart.len() >= opts.max_levels {
            break Halt::MaxLevels;
        }
        let next = match iterate_step(&mut chart, &cur, opts)? {
            Step::Advanced(c) => c,
            Step::Halted(_) => break Halt::Hypothesis,
        };
        let level = next.level;
        if level == 1 {
            let mm = (next.nu - opts.nu_floor).min(next.sigma - opts.sigma_floor);
            m = Some(mm);
            n_theory = Some((mm / (4.0 * next.k * next.eps_norm)).floor().max(0.0) as usize);
        }
        let stagnated = next.delta > STAGNATION * cur.delta;
        let floor = next.nu - next.xi < opts.nu_floor || next.sigma - next.xi < opts.sigma_floor;
        let exact = next.delta == 0.0;
        certs.push(next);
        if exact {
            break Halt::ZeroForcing;
        }
        match opts.mode {
            StopMode::FixedN => {
                if level > n_theory.unwrap_or(0) {
                    break Halt::FixedCount;
                }
                if floor {
                    break Halt::WidthFloor;
                }
            }
            StopMode::Adaptive => {
                if stagnated {
                    break Halt::Stagnation;
                }
                if floor {
                    break Halt::WidthFloor;
                }
            }
        }
    };
    let chosen_level = match opts.mode {
        StopMode::FixedN => chart.len(),
        StopMode::Adaptive => argmin_level(&certs),
    };
    chart.truncate(chosen_level);
    let trace = certs.iter().map(|c| (c.level, c.delta)).collect();
    let theory = match (m, certs.get(1)) {
        (Some(mm), Some(c1)) => Some(theory_slope(mm, c1.k, system.w_scale())),
        _ => None,
    };
    Ok(RefineOutcome {
        chart,
        decay: DecayReport::single(system.eps(), trace, theory),
        certificates: certs,
        halt,
        chosen_level,
        m,
        n_theory,
    })
}

/// First level attaining the smallest δ.
pub fn argmin_level(certs: &[Certificate]) -> usize {
    let mut best = 0;
    for (i, c) in certs.iter().enumerate() {
        if c.delta < certs[best].delta {
            best = i;
        }
    }
    certs[best].level
}

/// `ρ_N(w)` of the full chart and the factor `‖ρ_N‖ / ‖W_N(w, 0)‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorField {
    pub rho: Vec<f64>,
    /// `W_N(w, 0)` in original units.
    pub w_field: Vec<f64>,
    pub ratio: f64,
}

pub fn error_field(chart: &Chart, w: &[f64]) -> Result<ErrorField> {
    let view = chart.view(chart.len())?;
    let rho = view.rho(w)?;
    let d_z = chart.system().dims().1;
    let scale = chart.system().w_scale();
    let w_field: Vec<f64> = view.w_at(w, &vec![0.0; d_z])?.iter().map(|x| x * scale).collect();
    let (rn, wn) = (norm2(&rho), norm2(&w_field));
    let ratio = if wn > 0.0 { rn / wn } else if rn == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(ErrorField { rho, w_field, ratio })
}
