use num_complex::Complex64 as C64;
use proptest::prelude::*;
use slowfast::jet::Jet;
use slowfast::Scalar;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Elementary compositions in two variables.
const SUITE: usize = 7;

fn suite<S: Scalar>(k: usize, v: &[Jet<S>]) -> Jet<S> {
    let (x, y) = (&v[0], &v[1]);
    match k {
        0 => x.sin() * y.clone(),
        1 => (x * y).cos(),
        2 => (x - y).exp() * x.clone(),
        3 => (x.square() + y.square() + 1.0).recip().unwrap(),
        4 => (x + &(y * 2.0)).powi(3).unwrap(),
        5 => (x.exp() * y.clone()).sin(),
        _ => (x.cos() + 2.5).powi(-2).unwrap() - y.square() * x.clone(),
    }
}

fn jet_at(k: usize, p: &[f64], order: usize) -> Jet<f64> {
    suite(k, &Jet::variables(p, order).unwrap())
}

fn value_at(k: usize, p: &[f64]) -> f64 {
    jet_at(k, p, 0).val()
}

fn shifted(p: &[f64], i: usize, h: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    q[i] += h;
    q
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * b.abs().max(1.0)
}

fn check_against_differences(k: usize, p: &[f64]) {
    let j = jet_at(k, p, 3);
    for i in 0..2 {
        let fd = (value_at(k, &shifted(p, i, H)) - value_at(k, &shifted(p, i, -H))) / (2.0 * H);
        assert!(close(fd, j.grad(0, i)), "f{k} grad {i} at {p:?}: fd {fd} jet {}", j.grad(0, i));
        let f2 = (value_at(k, &shifted(p, i, 1e-4)) - 2.0 * value_at(k, p) + value_at(k, &shifted(p, i, -1e-4))) / 1e-8;
        assert!(close(f2, j.hess(0, i, i)), "f{k} hess {i}{i} from values: fd {f2} jet {}", j.hess(0, i, i));
        for a in 0..2 {
            let g = |q: &[f64]| jet_at(k, q, 1).grad(0, a);
            let fd = (g(&shifted(p, i, H)) - g(&shifted(p, i, -H))) / (2.0 * H);
            assert!(close(fd, j.hess(0, a, i)), "f{k} hess {a}{i}: fd {fd} jet {}", j.hess(0, a, i));
            for b in 0..2 {
                let hh = |q: &[f64]| jet_at(k, q, 2).hess(0, a, b);
                let fd = (hh(&shifted(p, i, H)) - hh(&shifted(p, i, -H))) / (2.0 * H);
                assert!(close(fd, j.third(0, a, b, i)), "f{k} third {a}{b}{i}: fd {fd} jet {}", j.third(0, a, b, i));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivatives_match_finite_differences(x in -1.5f64..1.5, y in -1.5f64..1.5) {
        for k in 0..SUITE {
            check_against_differences(k, &[x, y]);
        }
    }

    #[test]
    fn higher_tensors_are_symmetric(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        for k in 0..SUITE {
            let j = jet_at(k, &[x, y], 3);
            for a in 0..2 {
                for b in 0..2 {
                    prop_assert_eq!(j.hess(0, a, b).to_bits(), j.hess(0, b, a).to_bits());
                    for c in 0..2 {
                        let t = j.third(0, a, b, c).to_bits();
                        prop_assert_eq!(t, j.third(0, b, a, c).to_bits());
                        prop_assert_eq!(t, j.third(0, c, b, a).to_bits());
                        prop_assert_eq!(t, j.third(0, a, c, b).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn complex_jets_are_real_on_the_real_line(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        for k in 0..SUITE {
            let pc = [C64::new(x, 0.0), C64::new(y, 0.0)];
            let jc = suite(k, &Jet::variables(&pc, 3).unwrap());
            let jr = jet_at(k, &[x, y], 3);
            let mut checks = vec![(jc.val(), jr.val())];
            for a in 0..2 {
                checks.push((jc.grad(0, a), jr.grad(0, a)));
                for b in 0..2 {
                    checks.push((jc.hess(0, a, b), jr.hess(0, a, b)));
                    for c in 0..2 {
                        checks.push((jc.third(0, a, b, c), jr.third(0, a, b, c)));
                    }
                }
            }
            for (c, r) in checks {
                prop_assert!(c.im.abs() <= 1e-14, "imaginary part {}", c.im);
                prop_assert!((c.re - r).abs() <= 1e-13 * r.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_and_one_are_neutral(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let j = jet_at(5, &[x, y], 3);
        let zero = Jet::zeros(3, 2, 1).unwrap();
        let one = Jet::constant(&[1.0], 3, 2).unwrap();
        prop_assert_eq!(j.try_add(&zero).unwrap().max_abs_diff(&j), 0.0);
        prop_assert_eq!(j.try_mul(&one).unwrap().max_abs_diff(&j), 0.0);
    }

    #[test]
    fn product_rule_matches_componentwise_formula(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let v = Jet::variables(&[x, y], 2).unwrap();
        let (f, g) = (suite(0, &v), suite(2, &v));
        let p = f.try_mul(&g).unwrap();
        for a in 0..2 {
            let want = f.grad(0, a) * g.val() + f.val() * g.grad(0, a);
            prop_assert!((p.grad(0, a) - want).abs() <= 1e-13 * want.abs().max(1.0));
            for b in 0..2 {
                let want = f.hess(0, a, b) * g.val() + f.grad(0, a) * g.grad(0, b) + f.grad(0, b) * g.grad(0, a) + f.val() * g.hess(0, a, b);
                prop_assert!((p.hess(0, a, b) - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn seed_variable_is_the_identity_jet() {
    let j = Jet::seed_variable(&[0.0, 0.0], 2).unwrap();
    assert_eq!(j.value(), &[0.0, 0.0]);
    for o in 0..2 {
        for i in 0..2 {
            assert_eq!(j.grad(o, i), if o == i { 1.0 } else { 0.0 });
            for k in 0..2 {
                assert_eq!(j.hess(o, i, k), 0.0);
            }
        }
    }
    let j = Jet::seed_variable(&[1.5], 1).unwrap();
    assert_eq!((j.val(), j.grad(0, 0)), (1.5, 1.0));
    let j = Jet::seed_variable(&[2.0, 3.0], 3).unwrap();
    for o in 0..2 {
        for (a, b, c) in [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1)] {
            assert_eq!(j.third(o, a, b, c), 0.0);
        }
    }
    assert!(Jet::seed_variable(&[0.0], 4).is_err());
}

#[test]
fn square_at_three_matches_differences() {
    let x = &Jet::variables(&[3.0], 2).unwrap()[0];
    let j = x.try_mul(x).unwrap();
    let f = |t: f64| t * t;
    let h = 1e-5;
    let fd1 = (f(3.0 + h) - f(3.0 - h)) / (2.0 * h);
    let fd2 = (f(3.0 + 1e-3) - 2.0 * f(3.0) + f(3.0 - 1e-3)) / 1e-6;
    assert_eq!(j.val(), 9.0);
    assert!((j.grad(0, 0) - fd1).abs() < 1e-8 && j.grad(0, 0) == 6.0);
    assert!((j.hess(0, 0, 0) - fd2).abs() < 1e-6 && j.hess(0, 0, 0) == 2.0);
}

#[test]
fn elementary_values() {
    let at = |x: f64, order| Jet::variables(&[x], order).unwrap().remove(0);
    let s = at(0.0, 1).sin();
    assert_eq!((s.val(), s.grad(0, 0)), (0.0, 1.0));

    let e = at(0.0, 3).exp();
    let h = 1e-3;
    let fd3 = ((2.0 * h).exp() - 2.0 * h.exp() + 2.0 * (-h).exp() - (-2.0 * h).exp()) / (2.0 * h * h * h);
    assert!((fd3 - 1.0).abs() < 1e-6);
    for v in [e.val(), e.grad(0, 0), e.hess(0, 0, 0), e.third(0, 0, 0, 0)] {
        assert!((v - 1.0).abs() < 1e-15);
    }

    let r = at(2.0, 2).recip().unwrap();
    assert_eq!((r.val(), r.grad(0, 0), r.hess(0, 0, 0)), (0.5, -0.25, 0.25));
    let fd: f64 = (1.0 / (2.0 + 1e-5) - 1.0 / (2.0 - 1e-5)) / 2e-5;
    assert!((fd + 0.25).abs() < 1e-9);
    assert!(at(1e-13, 1).recip().is_err());
}

#[test]
fn taylor_prediction() {
    let x = Jet::variables(&[3.0], 2).unwrap().remove(0);
    let sq = x.square();
    assert_eq!(sq.taylor_predict(&[0.0]).unwrap(), vec![9.0]);
    let p = sq.taylor_predict(&[0.1]).unwrap()[0];
    assert!((p - 3.1f64 * 3.1).abs() < 1e-14);

    let s = Jet::variables(&[0.0], 1).unwrap().remove(0).sin();
    let p = s.taylor_predict(&[0.2]).unwrap()[0];
    assert_eq!(p, 0.2);
    assert!((p - 0.2f64.sin()).abs() <= 0.2 * 0.2 / 2.0);

    let c = Jet::variables(&[0.4, -0.3], 3).unwrap();
    let f = suite(5, &c);
    let h = [1e-2, -2e-2];
    let exact = value_at(5, &[0.41, -0.32]);
    let err = (f.taylor_predict(&h).unwrap()[0] - exact).abs();
    assert!(err < 1e-6, "third-order prediction error {err}");
}

#[test]
fn shape_mismatch_is_an_error() {
    let a = Jet::variables(&[1.0, 2.0], 2).unwrap().remove(0);
    let b = Jet::variables(&[1.0], 2).unwrap().remove(0);
    assert!(a.try_add(&b).is_err());
    let c = Jet::variables(&[1.0, 2.0], 1).unwrap().remove(0);
    assert!(a.try_mul(&c).is_err());
}

#[test]
fn composition_is_the_chain_rule() {
    let p = [0.3, -0.7];
    let v = Jet::variables(&p, 3).unwrap();
    let outer = Jet::variables(&[(p[0] * p[1]).exp(), p[0].sin()], 3).unwrap();
    let g = suite(1, &outer);
    let inner = [(&v[0] * &v[1]).exp(), v[0].sin()];
    let composed = g.compose(&inner).unwrap();
    let direct = suite(1, &inner);
    assert!(composed.max_abs_diff(&direct) < 1e-13);
}
