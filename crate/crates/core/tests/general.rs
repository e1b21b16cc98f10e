use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slowfast::examples::{self, BuiltSystem, ExampleParams};
use slowfast::jet::Jet;
use slowfast::norms::Sampler;
use slowfast::refine_general::{argmin_level, error_field, refine, solve_layer, Halt, RefineOptions, SOLVER_TOL};
use slowfast::sysmodel::{validate_assumptions, Chart, ChartMode, GeneralSpec, GeneralSystem, SlowFastField};
use slowfast::table::Axis;
use slowfast::{Error, Scalar};

fn sampler() -> Sampler {
    Sampler::new(256, 7).unwrap()
}

fn general(name: &str, eps: f64, params: &ExampleParams) -> Arc<GeneralSystem> {
    match examples::build(name, eps, params, &sampler()).unwrap() {
        BuiltSystem::General(g) => g,
        _ => panic!("{name} is not a general system"),
    }
}

fn options() -> RefineOptions {
    let d = examples::default_refine("counterexample").unwrap();
    let mut o = RefineOptions::new(d.nu_floor, d.sigma_floor, d.xi0);
    o.sampler = sampler();
    o
}

/// `ẇ = ε cos w`, `ż = −(2 + sin w) z + c sin 3w + z² + ½ w z²`.
struct Nonlinear {
    c: f64,
}

impl SlowFastField for Nonlinear {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> slowfast::Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        let (w, z) = (&w[0], &z[0]);
        let lin = -(w.sin() + 2.0) * z.clone();
        let zz = z.square();
        let zdot = lin + (w * 3.0).sin() * self.c + zz.clone() + (w * &zz) * 0.5;
        Ok((vec![w.cos()], vec![zdot]))
    }
}

/// `ẇ = ε`, `ż = −z + a + b z²`.
struct Scalar1 {
    a: f64,
    b: f64,
}

impl SlowFastField for Scalar1 {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> slowfast::Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        let zdot = -z[0].clone() + self.a + z[0].square() * self.b;
        Ok((vec![w[0].cst(1.0)], vec![zdot]))
    }
}

/// `ż = z²` only.
struct Degenerate;

impl SlowFastField for Degenerate {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> slowfast::Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        Ok((vec![w[0].cst(1.0)], vec![z[0].square()]))
    }
}

fn custom(field: impl SlowFastField + 'static, eps: f64) -> Arc<GeneralSystem> {
    let spec = GeneralSpec {
        name: "custom".into(),
        field: Arc::new(field),
        eps,
        slow_axes: vec![Axis::chebyshev(0.0, 1.0, 16)],
        fast_lo: vec![-0.5],
        fast_hi: vec![0.5],
        nu0: 0.5,
        sigma0: 0.5,
    };
    Arc::new(GeneralSystem::new(spec, &sampler()).unwrap())
}

#[test]
fn normalized_slow_field_has_unit_sup() {
    let g = general("counterexample", 0.02, &ExampleParams::default());
    let sup = sampler()
        .sup(&[g.slow_block(g.nu0()).unwrap(), g.fast_block(g.sigma0()).unwrap()], |p| {
            let (w, z) = p.split_at(1);
            let (wv, _) = g.fields(&Jet::variables(w, 0)?, &Jet::variables(z, 0)?)?;
            Ok(wv[0].val().norm())
        })
        .unwrap();
    assert!(sup.value <= 1.0 + 1e-9);
    assert!((g.eps_norm() - g.eps() * g.w_scale()).abs() < 1e-15);
}

#[test]
fn level_zero_certificate_of_the_counterexample() {
    let eps = 0.02;
    let p = ExampleParams { nu0: Some(0.5), sigma0: Some(0.5), ..Default::default() };
    let g = general("counterexample", eps, &p);
    let c = validate_assumptions(&g, &sampler(), 0.3).unwrap();
    assert_eq!(c.level, 0);
    assert!((c.k - 2.0).abs() < 1e-14, "K0 = {}", c.k);
    // sup |εw| over the width-½ neighbourhood of [0, 2] is attained at 2.5.
    assert!((c.delta - 2.5 * eps).abs() < 1e-15, "delta0 = {}", c.delta);
    assert!((c.delta_over_eps - c.delta / c.eps_norm).abs() < 1e-15);
}

#[test]
fn zero_linear_part_is_reported() {
    let g = custom(Degenerate, 0.01);
    let err = validate_assumptions(&g, &sampler(), 0.1).unwrap_err();
    assert!(matches!(err.root(), Error::SingularLinearPart { .. }), "{err}");
}

#[test]
fn chart_layers_of_the_counterexample() {
    let eps = 0.1;
    let g = general("counterexample", eps, &ExampleParams::default());
    let mut chart = Chart::new(g.clone(), ChartMode::Lazy);
    let empty = chart.eval(&[0.7], 1).unwrap();
    assert_eq!((empty.val(), empty.grad(0, 0)), (0.0, 0.0));
    chart.push_lazy().unwrap();
    let one = chart.eval(&[1.0], 1).unwrap();
    assert!((one.val() - 0.1).abs() < 1e-15 && (one.grad(0, 0) - 0.1).abs() < 1e-14);
    chart.push_lazy().unwrap();
    for w in [0.0, 0.4, 1.3, 2.0] {
        let two = chart.eval(&[w], 0).unwrap().val();
        let want = eps * w - eps * eps * (w - 1.0);
        assert!((two - want).abs() < 1e-14, "w = {w}: {two} vs {want}");
    }
    // ρ_0 is Z(w, 0) and ρ_1 = −ε² f for any f.
    let rho0 = chart.view(0).unwrap().rho(&[1.5]).unwrap()[0];
    assert!((rho0 - eps * 1.5).abs() < 1e-15);
    let rho1 = chart.view(1).unwrap().rho(&[0.5]).unwrap()[0];
    assert!((rho1 + 0.01 * (0.5 - 1.0)).abs() < 1e-15);
}

#[test]
fn oracle_layers_at_random_points_and_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = vec![-1.0, 1.0, 0.5];
    let p = ExampleParams { f: Some(f.clone()), ..Default::default() };
    for _ in 0..20 {
        let eps = rng.gen_range(0.005..0.1);
        let w = rng.gen_range(0.0..2.0);
        let g = general("counterexample", eps, &p);
        let mut chart = Chart::new(g, ChartMode::Lazy);
        chart.push_lazy().unwrap();
        chart.push_lazy().unwrap();
        let fw = -1.0 + w + 0.5 * w * w;
        let dfw = 1.0 + w;
        let rho1 = chart.view(1).unwrap().rho(&[w]).unwrap()[0];
        let rho2 = chart.view(2).unwrap().rho(&[w]).unwrap()[0];
        let (r1, r2) = (-eps * eps * fw, eps.powi(3) * dfw * fw);
        assert!((rho1 - r1).abs() <= 1e-10 * r1.abs(), "eps {eps} w {w}: rho1 {rho1} vs {r1}");
        assert!((rho2 - r2).abs() <= 1e-10 * r2.abs(), "eps {eps} w {w}: rho2 {rho2} vs {r2}");
    }
}

#[test]
fn transformed_field_is_the_conjugate() {
    let g = custom(Nonlinear { c: 0.05 }, 0.02);
    let mut chart = Chart::new(g.clone(), ChartMode::Lazy);
    chart.push_lazy().unwrap();
    chart.push_lazy().unwrap();
    let view = chart.view(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let w = [rng.gen_range(0.0..1.0)];
        let z = [rng.gen_range(-0.2..0.2)];
        let zeta = chart.eval(&w, 1).unwrap();
        let shifted = [Jet::scalar(zeta.val() + z[0], 0, 1)];
        let (wf, zf) = g.fields(&Jet::variables(&w, 0).unwrap(), &shifted).unwrap();
        let want = zf[0].val() - g.eps_norm() * zeta.grad(0, 0) * wf[0].val();
        let got = view.z_at(&w, &z).unwrap()[0];
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let r0 = view.remainder(&w, &[0.0]).unwrap()[0];
        let h = 1e-5;
        let dr = (view.remainder(&w, &[h]).unwrap()[0] - view.remainder(&w, &[-h]).unwrap()[0]) / (2.0 * h);
        assert!(r0.abs() < 1e-10 && dr.abs() < 1e-10, "R(w,0) = {r0}, dR = {dr}");
    }
}

#[test]
fn cache_does_not_change_results() {
    let g = custom(Nonlinear { c: 0.05 }, 0.02);
    let mut on = Chart::new(g.clone(), ChartMode::Lazy);
    let mut off = Chart::new(g, ChartMode::Lazy);
    off.set_cache(false);
    for c in [&mut on, &mut off] {
        c.push_lazy().unwrap();
        c.push_lazy().unwrap();
    }
    for w in [0.1, 0.35, 0.9] {
        for _ in 0..2 {
            let (a, b) = (on.eval(&[w], 1).unwrap(), off.eval(&[w], 1).unwrap());
            assert!(a.max_abs_diff(&b) <= 1e-14);
        }
    }
    assert!(!on.cache().is_empty());
    assert!(off.cache().is_empty());
}

#[test]
fn layer_solves() {
    let eps = 0.05;
    let g = general("counterexample", eps, &ExampleParams::default());
    let chart = Chart::new(g, ChartMode::Lazy);
    for w in [0.0, 0.7, 1.9] {
        let r = solve_layer(&chart.view(0).unwrap(), &[w], SOLVER_TOL, 1).unwrap();
        assert!((r.zeta.val() - eps * w).abs() < 1e-15);
        assert!(r.iterations <= 1 && r.contraction_est < 1.0 && r.residual <= 1e-13);
    }

    let toy = custom(Scalar1 { a: 0.01, b: 1.0 }, 0.01);
    let chart = Chart::new(toy, ChartMode::Lazy);
    let r = solve_layer(&chart.view(0).unwrap(), &[0.5], SOLVER_TOL, 0).unwrap();
    let want = (1.0 - (1.0f64 - 0.04).sqrt()) / 2.0;
    assert!((r.zeta.val() - want).abs() < 1e-12, "{} vs {want}", r.zeta.val());
    assert!((want - 0.0101021).abs() < 1e-7);

    let zero = custom(Scalar1 { a: 0.0, b: 1.0 }, 0.01);
    let chart = Chart::new(zero, ChartMode::Lazy);
    let r = solve_layer(&chart.view(0).unwrap(), &[0.5], SOLVER_TOL, 1).unwrap();
    assert_eq!((r.zeta.val(), r.iterations), (0.0, 0));
}

#[test]
fn implicit_derivative_matches_differences() {
    let g = custom(Nonlinear { c: 0.05 }, 0.02);
    let mut chart = Chart::new(g, ChartMode::Lazy);
    chart.push_lazy().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for level in [0, 1] {
        let view = chart.view(level).unwrap();
        for _ in 0..50 {
            let w = rng.gen_range(0.05..0.95);
            let z = |x: f64| solve_layer(&view, &[x], SOLVER_TOL, 0).unwrap().zeta.val();
            let h = 1e-5;
            let fd = (z(w + h) - z(w - h)) / (2.0 * h);
            let jet = solve_layer(&view, &[w], SOLVER_TOL, 2).unwrap().zeta;
            assert!((jet.grad(0, 0) - fd).abs() <= 1e-6 * fd.abs().max(1.0), "level {level} w {w}: {} vs {fd}", jet.grad(0, 0));
            let g1 = |x: f64| solve_layer(&view, &[x], SOLVER_TOL, 1).unwrap().zeta.grad(0, 0);
            let fd2 = (g1(w + h) - g1(w - h)) / (2.0 * h);
            assert!((jet.hess(0, 0, 0) - fd2).abs() <= 1e-6 * fd2.abs().max(1.0));
        }
    }
}

#[test]
fn refinement_decays_and_respects_the_schedule() {
    for (name, eps) in [("counterexample", 0.02), ("counterexample", 0.01), ("linear_hyperbolic", 0.02)] {
        let g = general(name, eps, &ExampleParams::default());
        let out = refine(g.clone(), &options()).unwrap();
        let c = &out.certificates;
        assert!(c.len() >= 4, "{name} {eps}: {} levels", c.len());
        for n in 1..c.len() - 1 {
            if c[n].hypothesis_ok {
                assert!(c[n + 1].delta <= 0.5 * c[n].delta + 1e-14, "{name} {eps} step {n}");
            }
        }
        assert!(c.iter().all(|x| !x.ratio_exceeded));
        for n in 1..c.len() {
            assert!(c[n].nu < c[n - 1].nu && c[n].sigma < c[n - 1].sigma);
            assert!((c[n].xi - 2.0 * c[n].k * c[n].eps_norm).abs() < 1e-15);
            assert!(c[n].k <= 2.0 * c[1].k);
            assert!(c[n].c_r <= 2.0 * c[1].c_r.max(1e-15));
        }
        // first big step: δ₁ ≤ ε K₀ δ₀ / ξ₀
        assert!(c[1].delta <= c[0].eps_norm * c[0].k / c[0].xi * c[0].delta);
        assert_eq!(out.chosen_level, argmin_level(c));
        assert_eq!(out.chart.len(), out.chosen_level);
        assert!(out.n_theory.is_some() && out.m.unwrap() > 0.0);
    }
}

#[test]
fn second_step_ratio_matches_the_closed_form() {
    // sup |w − 1| over the width-ν neighbourhood of [0, 2] is 1 + ν.
    let eps = 0.02;
    let out = refine(general("counterexample", eps, &ExampleParams::default()), &options()).unwrap();
    let c = &out.certificates;
    let want = eps * (1.0 + c[2].nu) / (1.0 + c[1].nu);
    assert!(((c[2].delta / c[1].delta) - want).abs() < 1e-9 * want);
    assert!(c[2].delta / c[1].delta <= eps);
}

#[test]
fn hyperbolic_slope_converges_geometrically() {
    let eps = 0.02;
    let g = general("linear_hyperbolic", eps, &ExampleParams::default());
    let out = refine(g, &options()).unwrap();
    let exact = examples::oracle("linear_hyperbolic", "manifold_slope", eps, &ExampleParams::default(), &[0.0]).unwrap()[0];
    let err: Vec<f64> = (0..=out.chart.len())
        .map(|n| (out.chart.eval_prefix(n, &[0.3], 1).unwrap().grad(0, 0) - exact).abs())
        .collect();
    for n in 1..err.len() - 1 {
        if err[n] > 1e-13 {
            assert!(err[n + 1] <= 0.5 * err[n], "step {n}: {err:?}");
        }
    }
    assert!(err.last().unwrap() < &1e-8);
}

#[test]
fn equilibrium_stays_pinned() {
    let out = refine(general("counterexample", 0.01, &ExampleParams::default()), &options()).unwrap();
    for n in 1..=out.chart.len() {
        let r = out.chart.view(n).unwrap().rho(&[1.0]).unwrap()[0];
        assert!(r.abs() <= 1e-12, "level {n}: {r}");
    }
}

#[test]
fn pointwise_error_scales_with_the_slow_field() {
    let eps = 0.02;
    let out = refine(general("counterexample", eps, &ExampleParams::default()), &options()).unwrap();
    let n = out.chart.len() as i32;
    let scaled = |w: f64| {
        let e = error_field(&out.chart, &[w]).unwrap();
        e.ratio / (eps * eps * 0.5f64.powi(n))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..100).map(|_| rng.gen_range(0.0..2.0)).filter(|w: &f64| (w - 1.0).abs() > 1e-3).collect()
    };
    let c = sample(&mut rng).into_iter().map(scaled).fold(0.0, f64::max);
    assert!(c.is_finite() && c > 0.0);
    for w in sample(&mut rng) {
        assert!(scaled(w) <= 1.05 * c, "w = {w}");
    }
    let at_root = error_field(&out.chart, &[1.0]).unwrap();
    assert!(at_root.rho[0].abs() <= 1e-12);
}

#[test]
fn already_invariant_system_is_left_alone() {
    let g = custom(Scalar1 { a: 0.0, b: 1.0 }, 0.01);
    let mut o = options();
    o.xi0 = 0.2;
    let out = refine(g, &o).unwrap();
    assert_eq!(out.halt, Halt::ZeroForcing);
    assert_eq!((out.chart.len(), out.certificates.len()), (0, 1));
}

#[test]
fn inadmissible_eps_halts_at_once() {
    let out = refine(general("counterexample", 0.1, &ExampleParams::default()), &options()).unwrap();
    assert_eq!(out.halt, Halt::Hypothesis);
    assert_eq!(out.certificates.len(), 1);
    assert!(!out.certificates[0].hypothesis_ok && !out.hypothesis_ok());
}

#[test]
fn argmin_prefers_the_earliest_tie() {
    let out = refine(general("counterexample", 0.02, &ExampleParams::default()), &options()).unwrap();
    let mut c = out.certificates.clone();
    let low = c.iter().map(|x| x.delta).fold(f64::INFINITY, f64::min);
    c[1].delta = low;
    c[2].delta = low;
    assert_eq!(argmin_level(&c), 1);
}

#[test]
fn floors_are_validated() {
    let g = general("counterexample", 0.02, &ExampleParams::default());
    let mut o = options();
    o.nu_floor = 0.9;
    assert!(matches!(refine(g, &o).unwrap_err(), Error::InvalidInput(_)));
}

#[test]
fn tabulated_and_lazy_charts_agree() {
    let eps = 0.02;
    let g = general("counterexample", eps, &ExampleParams::default());
    let out = refine(g.clone(), &options()).unwrap();
    let mut lazy = Chart::new(g, ChartMode::Lazy);
    for _ in 0..out.chart.len().min(3) {
        lazy.push_lazy().unwrap();
    }
    let n = lazy.len();
    for w in [0.1, 0.9, 1.7] {
        let a = out.chart.eval_prefix(n, &[w], 1).unwrap();
        let b = lazy.eval(&[w], 1).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12, "w = {w}");
    }
}

#[test]
fn registry_rejects_bad_requests() {
    let s = sampler();
    let p = ExampleParams::default();
    assert!(matches!(examples::build("nope", 0.01, &p, &s), Err(Error::UnknownSystem(_))));
    let zero_terms = ExampleParams { n_terms: Some(0), ..Default::default() };
    assert!(examples::build("neishtadt", 0.01, &zero_terms, &s).is_err());
    assert!(examples::build("counterexample", -0.01, &p, &s).is_err());
    let err = examples::oracle("elliptic_pendulum", "rho1", 0.01, &p, &[0.0, 0.0]).unwrap_err();
    assert!(matches!(err, Error::UnavailableQuantity { .. }));
    let pinned = ExampleParams { pinned: true, ..Default::default() };
    assert!(examples::oracle("neishtadt", "rho2", 0.01, &pinned, &[0.1, 0.2]).is_err());
    assert!(examples::quantities("elliptic_pendulum", &p).unwrap().is_empty());
}

#[test]
fn oracle_values() {
    let p = ExampleParams::default();
    let at = |name, q, w: &[f64]| examples::oracle(name, q, 0.1, &p, w).unwrap();
    assert!((at("counterexample", "zeta0", &[0.5])[0] - 0.05).abs() < 1e-16);
    assert!((at("counterexample", "rho1", &[0.5])[0] - 0.005).abs() < 1e-16);
    assert!((at("counterexample", "rho2", &[0.5])[0] + 5e-4).abs() < 1e-16);
    assert!((at("linear_hyperbolic", "manifold_slope", &[0.0])[0] - 0.1 / 1.1).abs() < 1e-16);
    // f(0) = 0 and f'(0) = Σ k e^{-k} for the neishtadt series
    let fp: f64 = (1..=30).map(|k| k as f64 * (-(k as f64)).exp()).sum();
    let r1 = at("neishtadt", "rho1", &[0.0, 0.0]);
    assert!((r1[0] + 0.01 * fp).abs() < 1e-15 && r1[1] == 0.0);
    assert_eq!(at("neishtadt", "zeta0", &[0.0, 0.0]), vec![0.0, 0.0]);
}

#[test]
fn builtin_oracles_self_check() {
    let s = sampler();
    for name in examples::SYSTEMS {
        let worst = examples::self_check(name, 0.02, &ExampleParams::default(), &s, 9).unwrap();
        assert!(worst <= examples::SELF_CHECK_TOL, "{name}: {worst}");
    }
    let pinned = ExampleParams { pinned: true, ..Default::default() };
    assert!(examples::self_check("neishtadt", 0.02, &pinned, &s, 9).unwrap() <= examples::SELF_CHECK_TOL);
}

#[test]
fn single_term_series() {
    let n = examples::Neishtadt { eps: 0.1, n_terms: 1, pinned: false };
    let e1 = (-1f64).exp();
    for u in [-1.0, 0.0, 0.4, 2.0] {
        assert!((n.f_deriv(u, 0) - e1 * f64::sin(u)).abs() < 1e-15);
        assert!((n.f_deriv(u, 1) - e1 * f64::cos(u)).abs() < 1e-15);
        assert!((n.f_deriv(u, 2) + e1 * f64::sin(u)).abs() < 1e-15);
    }
    let p = ExampleParams { n_terms: Some(1), ..Default::default() };
    let z = examples::oracle("neishtadt", "zeta0", 0.1, &p, &[0.4, 0.0]).unwrap();
    assert!((z[1] + 0.1 * e1 * 0.4f64.sin()).abs() < 1e-16);
    assert!(examples::self_check("neishtadt", 0.1, &p, &sampler(), 2).unwrap() <= 1e-12);
    let tail: f64 = (2..200).map(|k| (-(k as f64)).exp()).sum();
    assert!(examples::neishtadt_tail_bound(1) >= tail);
    assert!((examples::neishtadt_tail_bound(1) - (-1f64).exp() / (1.0 - (-1f64).exp())).abs() < 1e-16);
}
