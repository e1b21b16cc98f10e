//! End-to-end acceptance criteria. Each prints one PASS/FAIL line; the test
//! fails if any criterion fails. Run with `-- --nocapture` to see the table.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slowfast::cli::{run_config, RunConfig, RunSummary};
use slowfast::examples::{self, BuiltSystem, ExampleParams};
use slowfast::jet::Jet;
use slowfast::norms::Sampler;
use slowfast::persistence::{gap_set_scan, monodromy, RotorFamily};
use slowfast::refine_general::{refine, solve_layer, RefineOptions, SOLVER_TOL};
use slowfast::refine_ham::{check_equilibrium_pinned, lyapunov_monitor, refine_ham, HamOutcome, HamRefineOptions};
use slowfast::sysmodel::{Chart, ChartMode, GeneralSystem, HamiltonianSystem};
use slowfast::Scalar;
use tempfile::TempDir;

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Verdict + 'a>);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sampler() -> Sampler {
    Sampler::new(256, 7).unwrap()
}

fn general(name: &str, eps: f64, params: &ExampleParams) -> Arc<GeneralSystem> {
    match examples::build(name, eps, params, &sampler()).unwrap() {
        BuiltSystem::General(g) => g,
        _ => panic!("{name} is not a general system"),
    }
}

fn ham(name: &str, eps: f64, params: &ExampleParams) -> Arc<HamiltonianSystem> {
    match examples::build(name, eps, params, &sampler()).unwrap() {
        BuiltSystem::Hamiltonian(h) => h,
        _ => panic!("{name} is not Hamiltonian"),
    }
}

fn general_options(name: &str) -> RefineOptions {
    let d = examples::default_refine(name).unwrap();
    let mut o = RefineOptions::new(d.nu_floor, d.sigma_floor, d.xi0);
    o.sampler = sampler();
    o
}

fn ham_options(name: &str) -> HamRefineOptions {
    let d = examples::default_refine(name).unwrap();
    let mut o = HamRefineOptions::new(d.nu_floor, d.sigma_floor, d.xi0);
    o.sampler = sampler();
    o
}

fn refined(name: &str, eps: f64, params: &ExampleParams) -> HamOutcome {
    refine_ham(ham(name, eps, params), &ham_options(name)).unwrap()
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn run_shipped(name: &str, out: &Path) -> RunSummary {
    run_config(&RunConfig::load(&config_path(name)).unwrap(), out).unwrap()
}

/// ρ₁ and ρ₂ of the counterexample against their closed forms.
fn oracle_layers() -> Verdict {
    let start = Instant::now();
    let p = ExampleParams { f: Some(vec![-1.0, 1.0, 0.5]), ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let eps = rng.gen_range(0.005..0.1);
        let w = rng.gen_range(0.0..2.0);
        let mut chart = Chart::new(general("counterexample", eps, &p), ChartMode::Lazy);
        chart.push_lazy().unwrap();
        chart.push_lazy().unwrap();
        for (level, q) in [(1, "rho1"), (2, "rho2")] {
            let got = chart.view(level).unwrap().rho(&[w]).unwrap()[0];
            let want = examples::oracle("counterexample", q, eps, &p, &[w]).unwrap()[0];
            worst = worst.max((got - want).abs() / want.abs());
        }
    }
    let t = start.elapsed();
    check(worst <= 1e-10 && t < Duration::from_secs(1), format!("max rel err {worst:.2e} in {t:.2?}"))
}

/// Every admissible small step at least halves δ, up to a 10% margin.
fn small_step_contraction() -> Verdict {
    let start = Instant::now();
    let (mut worst, mut steps) = (0.0f64, 0);
    for name in ["elliptic_pendulum", "two_fast_modes"] {
        for eps in [0.1, 0.05, 0.025] {
            let c = refined(name, eps, &ExampleParams::default()).certificates;
            for n in 1..c.len().saturating_sub(1) {
                if c[n].hypothesis_ok {
                    worst = worst.max(c[n + 1].delta / c[n].delta);
                    steps += 1;
                }
            }
        }
    }
    let t = start.elapsed();
    check(
        steps > 0 && worst <= 0.55 && t < Duration::from_secs(60),
        format!("{steps} admissible steps, max ratio {worst:.3} in {t:.1?}"),
    )
}

/// Exponential fit over the shipped sweeps.
fn exponential_fit(runs: &[(&str, &RunSummary)], elapsed: Duration) -> Verdict {
    let mut ok = elapsed < Duration::from_secs(300);
    let mut parts = Vec::new();
    for (name, s) in runs {
        let fit = s.fit.as_ref().unwrap();
        let eps = fit.eps_values.len();
        let Some(f) = fit.fit.as_ref() else { return Err(format!("{name}: no fit")) };
        let (slope, r2) = (f.slope, f.r_squared);
        ok &= eps >= 5 && slope < 0.0 && r2 >= 0.98;
        parts.push(format!("{name}: {eps} eps, b {slope:.3}, R² {r2:.4}"));
    }
    check(ok, format!("{} in {elapsed:.1?}", parts.join("; ")))
}

/// `ρ_n(w_e) = 0` at every refined level of both pipelines.
fn equilibrium_pinning() -> Verdict {
    let mut worst = 0.0f64;
    let out = refine(general("counterexample", 0.01, &ExampleParams::default()), &general_options("counterexample")).unwrap();
    for n in 1..=out.chart.len() {
        worst = worst.max(out.chart.view(n).unwrap().rho(&[1.0]).unwrap()[0].abs());
    }
    for (name, params, eps) in [
        ("neishtadt", ExampleParams { pinned: true, ..Default::default() }, 0.03),
        ("elliptic_pendulum", ExampleParams::default(), 0.04),
        ("two_fast_modes", ExampleParams::default(), 0.05),
    ] {
        let out = refined(name, eps, &params);
        let w_e = out.system.equilibrium().unwrap().to_vec();
        worst = worst.max(check_equilibrium_pinned(&out.levels, &w_e).unwrap().max_violation);
    }
    check(worst <= 1e-11, format!("max |ρ_n(w_e)| {worst:.2e}"))
}

fn symplectic_layers(runs: &[(&str, &RunSummary)]) -> Verdict {
    let (mut sym, mut energy, mut eps_count, mut ok) = (0.0f64, 0.0f64, 0, true);
    for (_, s) in runs {
        eps_count = eps_count.max(s.checks.len());
        for r in &s.checks {
            ok &= !r.levels.is_empty() && r.levels.iter().all(|l| l.points >= 50);
            sym = sym.max(r.max_symplectic_err);
            energy = energy.max(r.max_energy_err);
        }
        ok &= s.checks.len() >= 3;
    }
    check(
        ok && sym <= 1e-8 && energy <= 1e-10,
        format!("max |DᵀΩD − Ω| {sym:.2e}, max energy err {energy:.2e}, {eps_count} eps per system"),
    )
}

/// The chart slope of the linear system converges to ε/(1+ε). Above
/// ε ≈ 0.035 the level-0 hypotheses fail and no layer is built.
fn hyperbolic_slope() -> Verdict {
    let (mut worst, mut final_err, mut layers) = (0.0f64, 0.0f64, usize::MAX);
    for eps in [0.03, 0.02, 0.01] {
        let out = refine(general("linear_hyperbolic", eps, &ExampleParams::default()), &general_options("linear_hyperbolic")).unwrap();
        layers = layers.min(out.chart.len());
        let exact = examples::oracle("linear_hyperbolic", "manifold_slope", eps, &ExampleParams::default(), &[0.0]).unwrap()[0];
        let err: Vec<f64> = (0..=out.chart.len())
            .map(|n| (out.chart.eval_prefix(n, &[0.3], 1).unwrap().grad(0, 0) - exact).abs())
            .collect();
        for n in 1..err.len() - 1 {
            if err[n] > 1e-13 {
                worst = worst.max(err[n + 1] / err[n]);
            }
        }
        // after N layers the error is at most 2^{-N} c
        final_err = final_err.max(err.last().unwrap() * 2f64.powi(out.chart.len() as i32) / exact);
    }
    check(
        layers >= 2 && worst <= 0.55 && final_err <= 1.0,
        format!("max error factor {worst:.3}, max 2^N err_N / c {final_err:.1e}, ≥ {layers} layers"),
    )
}

/// Trajectories started on the refined manifold stay closer as ε shrinks.
fn lyapunov_stability() -> Verdict {
    let start = Instant::now();
    let eps_list = [0.04, 0.03, 0.02];
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["neishtadt", "elliptic_pendulum"] {
        let mut sups = Vec::new();
        for eps in eps_list {
            let out = refined(name, eps, &ExampleParams::default());
            let r = lyapunov_monitor(&out.system, out.final_level(), &[0.3, 0.1], 1.0 / (eps * eps), 0.02).unwrap();
            sups.push(r.sup_z);
        }
        let decreasing = sups.windows(2).all(|w| w[1] < w[0]) && sups.iter().all(|s| *s > 0.0);
        let x: Vec<f64> = eps_list.iter().map(|e| 1.0 / e).collect();
        let y: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
        let slope = least_squares_slope(&x, &y);
        ok &= decreasing && slope < 0.0;
        parts.push(format!("{name}: sup‖z‖ {:.1e} → {:.1e}, slope {slope:.3}", sups[0], sups[2]));
    }
    let t = start.elapsed();
    check(ok && t < Duration::from_secs(600), format!("{} in {t:.1?}", parts.join("; ")))
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn monodromy_checks() -> Verdict {
    let mut rot = 0.0f64;
    for (eps, omega, e) in [(0.1, 1.0, 0.0), (0.1, 1.7, 0.35), (0.05, 0.6, 0.8)] {
        let f = RotorFamily::constant(eps, omega, 0.0);
        let m = monodromy(&f, e).unwrap();
        let theta = m.period * omega / eps;
        for g in m.multipliers_c64() {
            let d = [theta, -theta]
                .iter()
                .map(|t| (g - num_complex::Complex64::from_polar(1.0, *t)).norm())
                .fold(f64::INFINITY, f64::min);
            rot = rot.max(d);
        }
    }
    let f = RotorFamily::one_mode(0.1, 0.2, 1e-3);
    let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let mut det = 0.0f64;
    let mut measures = Vec::new();
    for mu in [1e-3, 5e-4] {
        let scan = gap_set_scan(&f, &grid, mu).unwrap();
        for r in &scan.rows {
            det = det.max((r.monodromy.as_ref().unwrap().det - 1.0).abs());
        }
        measures.push(scan.excluded_measure);
    }
    check(
        rot <= 1e-8 && det <= 1e-8 && measures[1] <= measures[0],
        format!("multiplier err {rot:.1e}, max |det − 1| {det:.1e}, excluded {:.3} → {:.3}", measures[0], measures[1]),
    )
}

fn elementary<S: Scalar>(k: usize, v: &[Jet<S>]) -> Jet<S> {
    let (x, y) = (&v[0], &v[1]);
    match k {
        0 => x.sin() * y.clone(),
        1 => (x * y).cos(),
        2 => (x - y).exp() * x.clone(),
        3 => (x.square() + y.square() + 1.0).recip().unwrap(),
        _ => (x + &(y * 2.0)).powi(3).unwrap(),
    }
}

/// Jet derivatives through third order and `∂_w ζ` against central differences.
fn derivative_accuracy() -> Verdict {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for k in 0..5 {
        for _ in 0..10 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let jet = |q: &[f64], order| elementary(k, &Jet::variables(q, order).unwrap());
            let j = jet(&p, 3);
            for i in 0..2 {
                let (mut a, mut b) = (p, p);
                a[i] += H;
                b[i] -= H;
                let (ja, jb) = (jet(&a, 2), jet(&b, 2));
                worst = worst.max(rel(j.grad(0, i), (ja.val() - jb.val()) / (2.0 * H)));
                for r in 0..2 {
                    worst = worst.max(rel(j.hess(0, r, i), (ja.grad(0, r) - jb.grad(0, r)) / (2.0 * H)));
                    for s in 0..2 {
                        worst = worst.max(rel(j.third(0, r, s, i), (ja.hess(0, r, s) - jb.hess(0, r, s)) / (2.0 * H)));
                    }
                }
            }
        }
    }
    let jets = worst;

    let p = ExampleParams { f: Some(vec![-1.0, 1.0, 0.5]), ..Default::default() };
    let mut chart = Chart::new(general("counterexample", 0.02, &p), ChartMode::Lazy);
    chart.push_lazy().unwrap();
    let mut implicit = 0.0f64;
    for level in [0, 1] {
        let view = chart.view(level).unwrap();
        for _ in 0..20 {
            let w = rng.gen_range(0.1..1.9);
            let z = |x: f64| solve_layer(&view, &[x], SOLVER_TOL, 0).unwrap().zeta.val();
            let fd = (z(w + H) - z(w - H)) / (2.0 * H);
            let jet = solve_layer(&view, &[w], SOLVER_TOL, 1).unwrap().zeta;
            implicit = implicit.max(rel(jet.grad(0, 0), fd));
        }
    }
    check(jets <= 1e-6 && implicit <= 1e-6, format!("jets {jets:.1e}, implicit ∂wζ {implicit:.1e}"))
}

fn byte_identical_reports() -> Verdict {
    let dir = TempDir::new().unwrap();
    let mut same = true;
    let mut names = Vec::new();
    for name in ["counterexample", "linear_hyperbolic"] {
        let (a, b) = (dir.path().join(format!("{name}-a")), dir.path().join(format!("{name}-b")));
        run_shipped(name, &a);
        run_shipped(name, &b);
        for f in ["decay.csv", "fit.json"] {
            same &= fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
        }
        names.push(name);
    }
    check(same, format!("decay.csv and fit.json identical for {}", names.join(", ")))
}

#[test]
fn acceptance() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    let neishtadt = run_shipped("neishtadt", &dir.path().join("neishtadt"));
    let pendulum = run_shipped("elliptic_pendulum", &dir.path().join("elliptic_pendulum"));
    let sweep_time = start.elapsed();
    let runs = [("neishtadt", &neishtadt), ("elliptic_pendulum", &pendulum)];

    let criteria: Vec<Criterion> = vec![
        ("oracle layers", Box::new(oracle_layers)),
        ("small-step contraction", Box::new(small_step_contraction)),
        ("exponential fit", Box::new(|| exponential_fit(&runs, sweep_time))),
        ("equilibrium pinning", Box::new(equilibrium_pinning)),
        ("symplectic layers", Box::new(|| symplectic_layers(&runs))),
        ("hyperbolic slope", Box::new(hyperbolic_slope)),
        ("lyapunov stability", Box::new(lyapunov_stability)),
        ("monodromy", Box::new(monodromy_checks)),
        ("derivative accuracy", Box::new(derivative_accuracy)),
        ("reproducibility", Box::new(byte_identical_reports)),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        match run() {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({detail})"),
            Err(detail) => {
                println!("criterion {id:>2} {name}: FAIL ({detail})");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
