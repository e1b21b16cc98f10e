//! Truncated Taylor expansions ("jets") of vector-valued maps up to third order.
//!
//! A jet stores the value and the symmetric derivative tensors of
//! `F : S^dim_in -> S^dim_out` at one point. Arithmetic follows the Leibniz
//! and Faà di Bruno rules. Every symmetric entry is computed once from its
//! sorted index and mirrored, so the tensors are symmetric bit for bit.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Highest derivative order a jet can carry.
pub const MAX_ORDER: usize = 3;

/// Reciprocals of values at or below this modulus are refused.
pub const RECIP_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Jet<S> {
    order: usize,
    dim_in: usize,
    dim_out: usize,
    value: Vec<S>,
    // Row-major: grad[o][i], hess[o][i][j], third[o][i][j][k]. Empty when
    // the order is too low to carry them.
    grad: Vec<S>,
    hess: Vec<S>,
    third: Vec<S>,
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_ORDER {
        return Err(Error::OrderExceeded { requested: order, max: MAX_ORDER });
    }
    Ok(())
}

impl<S: Scalar> Jet<S> {
    pub fn zeros(order: usize, dim_in: usize, dim_out: usize) -> Result<Self> {
        check_order(order)?;
        let d = dim_in;
        let len = |k: usize, n: usize| if order >= k { n } else { 0 };
        Ok(Jet {
            order,
            dim_in,
            dim_out,
            value: vec![S::zero(); dim_out],
            grad: vec![S::zero(); len(1, dim_out * d)],
            hess: vec![S::zero(); len(2, dim_out * d * d)],
            third: vec![S::zero(); len(3, dim_out * d * d * d)],
        })
    }

    /// A jet with the given values and vanishing derivatives.
    pub fn constant(values: &[S], order: usize, dim_in: usize) -> Result<Self> {
        let mut j = Self::zeros(order, dim_in, values.len())?;
        j.value.copy_from_slice(values);
        Ok(j)
    }

    /// Scalar constant jet.
    pub fn scalar(c: S, order: usize, dim_in: usize) -> Self {
        Self::constant(&[c], order.min(MAX_ORDER), dim_in).expect("order clamped")
    }

    /// The identity map seeded at `point`: value = point, gradient = identity.
    pub fn seed_variable(point: &[S], order: usize) -> Result<Self> {
        let d = point.len();
        let mut j = Self::constant(point, order, d)?;
        if order >= 1 {
            for i in 0..d {
                j.grad[i * d + i] = S::one();
            }
        }
        Ok(j)
    }

    /// The coordinates of `point` as separate scalar jets.
    pub fn variables(point: &[S], order: usize) -> Result<Vec<Self>> {
        Ok(Self::seed_variable(point, order)?.components())
    }

    /// Independent variable `index` of `dim_in` at value `x`.
    pub fn variable(x: S, index: usize, dim_in: usize, order: usize) -> Result<Self> {
        if index >= dim_in {
            return Err(Error::dims(format!("variable {index} of {dim_in}")));
        }
        let mut j = Self::constant(&[x], order, dim_in)?;
        if order >= 1 {
            j.grad[index] = S::one();
        }
        Ok(j)
    }

    pub fn order(&self) -> usize {
        self.order
    }
    pub fn dim_in(&self) -> usize {
        self.dim_in
    }
    pub fn dim_out(&self) -> usize {
        self.dim_out
    }
    pub fn value(&self) -> &[S] {
        &self.value
    }
    /// Value of a scalar jet.
    pub fn val(&self) -> S {
        self.value[0]
    }
    pub fn grad(&self, o: usize, i: usize) -> S {
        if self.order < 1 {
            return S::zero();
        }
        self.grad[o * self.dim_in + i]
    }
    pub fn hess(&self, o: usize, i: usize, j: usize) -> S {
        if self.order < 2 {
            return S::zero();
        }
        let d = self.dim_in;
        self.hess[(o * d + i) * d + j]
    }
    pub fn third(&self, o: usize, i: usize, j: usize, k: usize) -> S {
        if self.order < 3 {
            return S::zero();
        }
        let d = self.dim_in;
        self.third[((o * d + i) * d + j) * d + k]
    }

    pub(crate) fn set_value(&mut self, o: usize, v: S) {
        self.value[o] = v;
    }
    pub(crate) fn set_grad(&mut self, o: usize, i: usize, v: S) {
        self.grad[o * self.dim_in + i] = v;
    }
    pub(crate) fn set_hess_sym(&mut self, o: usize, i: usize, j: usize, v: S) {
        let d = self.dim_in;
        self.hess[(o * d + i) * d + j] = v;
        self.hess[(o * d + j) * d + i] = v;
    }
    pub(crate) fn set_third_sym(&mut self, o: usize, i: usize, j: usize, k: usize, v: S) {
        let d = self.dim_in;
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.third[((o * d + a) * d + b) * d + c] = v;
        }
    }

    /// Output `o` as a scalar jet.
    pub fn component(&self, o: usize) -> Self {
        let d = self.dim_in;
        let slice = |v: &Vec<S>, n: usize| if v.is_empty() { Vec::new() } else { v[o * n..(o + 1) * n].to_vec() };
        Jet {
            order: self.order,
            dim_in: d,
            dim_out: 1,
            value: vec![self.value[o]],
            grad: slice(&self.grad, d),
            hess: slice(&self.hess, d * d),
            third: slice(&self.third, d * d * d),
        }
    }

    pub fn components(&self) -> Vec<Self> {
        (0..self.dim_out).map(|o| self.component(o)).collect()
    }

    /// Concatenate outputs of jets sharing order and input dimension.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::dims("stack of no jets"))?;
        let (order, d) = (first.order, first.dim_in);
        let mut out = Jet::zeros(order, d, 0)?;
        for p in parts {
            if p.order != order || p.dim_in != d {
                return Err(Error::dims("stacked jets differ in order or input dimension"));
            }
            out.dim_out += p.dim_out;
            out.value.extend_from_slice(&p.value);
            out.grad.extend_from_slice(&p.grad);
            out.hess.extend_from_slice(&p.hess);
            out.third.extend_from_slice(&p.third);
        }
        Ok(out)
    }

    /// Drop derivatives above `order`.
    pub fn truncate(&self, order: usize) -> Self {
        if order >= self.order {
            return self.clone();
        }
        let mut j = self.clone();
        j.order = order;
        if order < 3 {
            j.third.clear();
        }
        if order < 2 {
            j.hess.clear();
        }
        if order < 1 {
            j.grad.clear();
        }
        j
    }

    /// Jet of `dF/dx_a`, one order lower.
    pub fn partial(&self, a: usize) -> Result<Self> {
        if self.order == 0 {
            return Err(Error::invalid("partial derivative of an order-0 jet"));
        }
        if a >= self.dim_in {
            return Err(Error::dims(format!("partial along {a} of {}", self.dim_in)));
        }
        let d = self.dim_in;
        let mut j = Jet::zeros(self.order - 1, d, self.dim_out)?;
        for o in 0..self.dim_out {
            j.value[o] = self.grad(o, a);
            for i in 0..d {
                if j.order >= 1 {
                    j.grad[o * d + i] = self.hess(o, a, i);
                }
                if j.order >= 2 {
                    for k in 0..d {
                        j.hess[(o * d + i) * d + k] = self.third(o, a, i, k);
                    }
                }
            }
        }
        Ok(j)
    }

    /// Restrict to the input variables listed in `vars` (in that order).
    pub fn restrict(&self, vars: &[usize]) -> Result<Self> {
        if vars.iter().any(|&v| v >= self.dim_in) {
            return Err(Error::dims("restriction to a missing variable"));
        }
        let n = vars.len();
        let mut j = Jet::zeros(self.order, n, self.dim_out)?;
        for o in 0..self.dim_out {
            j.value[o] = self.value[o];
            for (i, &vi) in vars.iter().enumerate() {
                if self.order >= 1 {
                    j.grad[o * n + i] = self.grad(o, vi);
                }
                for (k, &vk) in vars.iter().enumerate() {
                    if self.order >= 2 {
                        j.hess[(o * n + i) * n + k] = self.hess(o, vi, vk);
                    }
                    if self.order >= 3 {
                        for (l, &vl) in vars.iter().enumerate() {
                            j.third[((o * n + i) * n + k) * n + l] = self.third(o, vi, vk, vl);
                        }
                    }
                }
            }
        }
        Ok(j)
    }

    /// Taylor prediction `F(p + h)` through the jet order.
    pub fn taylor_predict(&self, h: &[S]) -> Result<Vec<S>> {
        if h.len() != self.dim_in {
            return Err(Error::dims("step length differs from jet input dimension"));
        }
        let d = self.dim_in;
        let mut out = self.value.clone();
        for (o, out_o) in out.iter_mut().enumerate() {
            for i in 0..d {
                if self.order >= 1 {
                    *out_o += self.grad(o, i) * h[i];
                }
                for k in 0..d {
                    if self.order >= 2 {
                        *out_o += self.hess(o, i, k) * h[i] * h[k] * 0.5;
                    }
                    if self.order >= 3 {
                        for l in 0..d {
                            *out_o += self.third(o, i, k, l) * h[i] * h[k] * h[l] * (1.0 / 6.0);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Largest coefficient difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.order != other.order || self.dim_in != other.dim_in || self.dim_out != other.dim_out {
            return f64::INFINITY;
        }
        self.coefficients()
            .zip(other.coefficients())
            .map(|(a, b)| (*a - *b).modulus())
            .fold(0.0, f64::max)
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.coefficients().map(|a| a.modulus()).fold(0.0, f64::max)
    }

    /// True when every derivative entry vanishes.
    pub fn is_constant(&self) -> bool {
        self.grad.iter().chain(&self.hess).chain(&self.third).all(|x| x.modulus() == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients().all(|a| a.is_finite())
    }

    fn coefficients(&self) -> impl Iterator<Item = &S> {
        self.value.iter().chain(&self.grad).chain(&self.hess).chain(&self.third)
    }

    fn map_coefficients(&self, f: impl Fn(S) -> S) -> Self {
        let m = |v: &Vec<S>| v.iter().map(|&x| f(x)).collect();
        Jet {
            order: self.order,
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            value: m(&self.value),
            grad: m(&self.grad),
            hess: m(&self.hess),
            third: m(&self.third),
        }
    }

    pub fn scale(&self, c: S) -> Self {
        self.map_coefficients(|x| x * c)
    }

    pub fn add_scalar(&self, c: S) -> Self {
        let mut j = self.clone();
        for v in &mut j.value {
            *v += c;
        }
        j
    }

    /// A constant jet shaped like `self`.
    pub fn cst(&self, c: f64) -> Self {
        Self::scalar(S::from_f64(c), self.order, self.dim_in)
    }

    fn zip_same(&self, other: &Self, what: &str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.order != other.order || self.dim_in != other.dim_in || self.dim_out != other.dim_out {
            return Err(Error::dims(format!(
                "{what}: ({}, {}, {}) vs ({}, {}, {})",
                self.order, self.dim_in, self.dim_out, other.order, other.dim_in, other.dim_out
            )));
        }
        let z = |a: &Vec<S>, b: &Vec<S>| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        Ok(Jet {
            order: self.order,
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            value: z(&self.value, &other.value),
            grad: z(&self.grad, &other.grad),
            hess: z(&self.hess, &other.hess),
            third: z(&self.third, &other.third),
        })
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.zip_same(other, "add", |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.zip_same(other, "sub", |a, b| a - b)
    }

    /// Componentwise product. A scalar jet broadcasts against any output count.
    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        if self.order != other.order || self.dim_in != other.dim_in {
            return Err(Error::dims("mul: jets differ in order or input dimension"));
        }
        let m = match (self.dim_out, other.dim_out) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            (a, b) => return Err(Error::dims(format!("mul: {a} outputs vs {b}"))),
        };
        let (d, p) = (self.dim_in, self.order);
        let mut out = Jet::zeros(p, d, m)?;
        for o in 0..m {
            let oa = if self.dim_out == 1 { 0 } else { o };
            let ob = if other.dim_out == 1 { 0 } else { o };
            let (a0, b0) = (self.value[oa], other.value[ob]);
            out.value[o] = a0 * b0;
            if p == 0 {
                continue;
            }
            let ag = |i| self.grad(oa, i);
            let bg = |i| other.grad(ob, i);
            for i in 0..d {
                out.grad[o * d + i] = ag(i) * b0 + a0 * bg(i);
            }
            if p < 2 {
                continue;
            }
            let ah = |i, j| self.hess(oa, i, j);
            let bh = |i, j| other.hess(ob, i, j);
            for i in 0..d {
                for j in i..d {
                    let v = ah(i, j) * b0 + ag(i) * bg(j) + ag(j) * bg(i) + a0 * bh(i, j);
                    out.set_hess_sym(o, i, j, v);
                }
            }
            if p < 3 {
                continue;
            }
            for i in 0..d {
                for j in i..d {
                    for k in j..d {
                        let v = self.third(oa, i, j, k) * b0
                            + ah(i, j) * bg(k)
                            + ah(i, k) * bg(j)
                            + ah(j, k) * bg(i)
                            + ag(i) * bh(j, k)
                            + ag(j) * bh(i, k)
                            + ag(k) * bh(i, j)
                            + a0 * other.third(ob, i, j, k);
                        out.set_third_sym(o, i, j, k, v);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Apply a univariate `g` to every output; `derivs(x)` returns `[g, g', g'', g''']` at `x`.
    pub fn compose_univariate(&self, derivs: impl Fn(S) -> Result<[S; 4]>) -> Result<Self> {
        let (d, p) = (self.dim_in, self.order);
        let mut out = Jet::zeros(p, d, self.dim_out)?;
        for o in 0..self.dim_out {
            let [g0, g1, g2, g3] = derivs(self.value[o])?;
            out.value[o] = g0;
            if p == 0 {
                continue;
            }
            let f = |i| self.grad(o, i);
            for i in 0..d {
                out.grad[o * d + i] = g1 * f(i);
            }
            if p < 2 {
                continue;
            }
            let fh = |i, j| self.hess(o, i, j);
            for i in 0..d {
                for j in i..d {
                    out.set_hess_sym(o, i, j, g2 * f(i) * f(j) + g1 * fh(i, j));
                }
            }
            if p < 3 {
                continue;
            }
            for i in 0..d {
                for j in i..d {
                    for k in j..d {
                        let v = g3 * f(i) * f(j) * f(k)
                            + g2 * (fh(i, j) * f(k) + fh(i, k) * f(j) + fh(j, k) * f(i))
                            + g1 * self.third(o, i, j, k);
                        out.set_third_sym(o, i, j, k, v);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn sin(&self) -> Self {
        self.compose_univariate(|x| {
            let (s, c) = (x.sin(), x.cos());
            Ok([s, c, -s, -c])
        })
        .expect("sin is entire")
    }

    pub fn cos(&self) -> Self {
        self.compose_univariate(|x| {
            let (s, c) = (x.sin(), x.cos());
            Ok([c, -s, -c, s])
        })
        .expect("cos is entire")
    }

    pub fn exp(&self) -> Self {
        self.compose_univariate(|x| {
            let e = x.exp();
            Ok([e; 4])
        })
        .expect("exp is entire")
    }

    pub fn recip(&self) -> Result<Self> {
        self.compose_univariate(|x| {
            if x.modulus() <= RECIP_FLOOR {
                return Err(Error::NearZeroReciprocal(x.modulus()));
            }
            let r = x.recip();
            let r2 = r * r;
            Ok([r, -r2, r2 * r * 2.0, -(r2 * r2) * 6.0])
        })
    }

    pub fn powi(&self, n: i32) -> Result<Self> {
        if n < 0 {
            return self.recip()?.powi(-n);
        }
        self.compose_univariate(|x| {
            let p = |k: i32| if k < 0 { S::zero() } else { pow(x, k as u32) };
            let nf = n as f64;
            Ok([p(n), p(n - 1) * nf, p(n - 2) * (nf * (nf - 1.0)), p(n - 3) * (nf * (nf - 1.0) * (nf - 2.0))])
        })
    }

    pub fn square(&self) -> Self {
        self.try_mul(self).expect("same shape")
    }

    /// `outer ∘ inner`, where `outer` is the jet of `F : S^k -> S^m` taken at
    /// the values of the `k` scalar `inner` jets.
    pub fn compose(&self, inner: &[Self]) -> Result<Self> {
        let k = self.dim_in;
        if inner.len() != k {
            return Err(Error::dims(format!("compose: outer expects {k} inputs, got {}", inner.len())));
        }
        if inner.iter().any(|y| y.dim_out != 1) {
            return Err(Error::dims("compose: inner jets must be scalar"));
        }
        let (d, p_in) = match inner.first() {
            Some(y) => (y.dim_in, y.order),
            None => return Jet::constant(&self.value, self.order, 0),
        };
        if inner.iter().any(|y| y.dim_in != d || y.order != p_in) {
            return Err(Error::dims("compose: inner jets differ in order or input dimension"));
        }
        let p = p_in.min(self.order);
        let m = self.dim_out;
        let mut out = Jet::zeros(p, d, m)?;
        out.value.copy_from_slice(&self.value);
        if p == 0 {
            return Ok(out);
        }
        let yg = |a: usize, i: usize| inner[a].grad(0, i);
        let yh = |a: usize, i: usize, j: usize| inner[a].hess(0, i, j);
        for o in 0..m {
            for i in 0..d {
                let mut s = S::zero();
                for a in 0..k {
                    s += self.grad(o, a) * yg(a, i);
                }
                out.grad[o * d + i] = s;
            }
        }
        if p < 2 {
            return Ok(out);
        }
        // fy[o][b][i] = sum_a F_{o,ab} y_{a,i}
        let mut fy = vec![S::zero(); m * k * d];
        for o in 0..m {
            for b in 0..k {
                for i in 0..d {
                    let mut s = S::zero();
                    for a in 0..k {
                        s += self.hess(o, a, b) * yg(a, i);
                    }
                    fy[(o * k + b) * d + i] = s;
                }
            }
        }
        for o in 0..m {
            for i in 0..d {
                for j in i..d {
                    let mut s = S::zero();
                    for b in 0..k {
                        s += fy[(o * k + b) * d + i] * yg(b, j) + self.grad(o, b) * yh(b, i, j);
                    }
                    out.set_hess_sym(o, i, j, s);
                }
            }
        }
        if p < 3 {
            return Ok(out);
        }
        // t1[o][b][c][i] = sum_a F_{o,abc} y_{a,i};  t2[o][c][i][j] = sum_b t1[o][b][c][i] y_{b,j}
        let mut t2 = vec![S::zero(); m * k * d * d];
        let mut t1 = vec![S::zero(); k * k * d];
        for o in 0..m {
            t1.iter_mut().for_each(|x| *x = S::zero());
            for b in 0..k {
                for c in 0..k {
                    for i in 0..d {
                        let mut s = S::zero();
                        for a in 0..k {
                            s += self.third(o, a, b, c) * yg(a, i);
                        }
                        t1[(b * k + c) * d + i] = s;
                    }
                }
            }
            for c in 0..k {
                for i in 0..d {
                    for j in 0..d {
                        let mut s = S::zero();
                        for b in 0..k {
                            s += t1[(b * k + c) * d + i] * yg(b, j);
                        }
                        t2[((o * k + c) * d + i) * d + j] = s;
                    }
                }
            }
        }
        for o in 0..m {
            for i in 0..d {
                for j in i..d {
                    for l in j..d {
                        let mut s = S::zero();
                        for c in 0..k {
                            s += t2[((o * k + c) * d + i) * d + j] * yg(c, l);
                            s += fy[(o * k + c) * d + l] * yh(c, i, j)
                                + fy[(o * k + c) * d + j] * yh(c, i, l)
                                + fy[(o * k + c) * d + i] * yh(c, j, l);
                            s += self.grad(o, c) * inner[c].third(0, i, j, l);
                        }
                        out.set_third_sym(o, i, j, l, s);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn pow<S: Scalar>(x: S, k: u32) -> S {
    let mut r = S::one();
    for _ in 0..k {
        r *= x;
    }
    r
}

/// Sum of jets of identical shape.
pub fn sum<S: Scalar>(parts: &[Jet<S>]) -> Result<Jet<S>> {
    let mut it = parts.iter();
    let first = it.next().ok_or_else(|| Error::dims("sum of no jets"))?.clone();
    it.try_fold(first, |acc, j| acc.try_add(j))
}

/// `sum_i a_i b_i` over scalar jets.
pub fn dot<S: Scalar>(a: &[Jet<S>], b: &[Jet<S>]) -> Result<Jet<S>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dims("dot: lengths differ or are zero"));
    }
    let mut acc = a[0].try_mul(&b[0])?;
    for (x, y) in a.iter().zip(b).skip(1) {
        acc = acc.try_add(&x.try_mul(y)?)?;
    }
    Ok(acc)
}

macro_rules! binop {
    ($tr:ident, $m:ident, $f:ident) => {
        impl<S: Scalar> $tr<&Jet<S>> for &Jet<S> {
            type Output = Jet<S>;
            fn $m(self, rhs: &Jet<S>) -> Jet<S> {
                self.$f(rhs).expect(concat!("jet ", stringify!($m), ": incompatible shapes"))
            }
        }
        impl<S: Scalar> $tr<Jet<S>> for Jet<S> {
            type Output = Jet<S>;
            fn $m(self, rhs: Jet<S>) -> Jet<S> {
                (&self).$m(&rhs)
            }
        }
        impl<S: Scalar> $tr<&Jet<S>> for Jet<S> {
            type Output = Jet<S>;
            fn $m(self, rhs: &Jet<S>) -> Jet<S> {
                (&self).$m(rhs)
            }
        }
        impl<S: Scalar> $tr<Jet<S>> for &Jet<S> {
            type Output = Jet<S>;
            fn $m(self, rhs: Jet<S>) -> Jet<S> {
                self.$m(&rhs)
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl<S: Scalar> Mul<f64> for &Jet<S> {
    type Output = Jet<S>;
    fn mul(self, c: f64) -> Jet<S> {
        self.map_coefficients(|x| x * c)
    }
}

impl<S: Scalar> Mul<f64> for Jet<S> {
    type Output = Jet<S>;
    fn mul(self, c: f64) -> Jet<S> {
        &self * c
    }
}

impl<S: Scalar> Add<f64> for &Jet<S> {
    type Output = Jet<S>;
    fn add(self, c: f64) -> Jet<S> {
        self.add_scalar(S::from_f64(c))
    }
}

impl<S: Scalar> Add<f64> for Jet<S> {
    type Output = Jet<S>;
    fn add(self, c: f64) -> Jet<S> {
        &self + c
    }
}

impl<S: Scalar> Sub<f64> for &Jet<S> {
    type Output = Jet<S>;
    fn sub(self, c: f64) -> Jet<S> {
        self.add_scalar(S::from_f64(-c))
    }
}

impl<S: Scalar> Sub<f64> for Jet<S> {
    type Output = Jet<S>;
    fn sub(self, c: f64) -> Jet<S> {
        &self - c
    }
}

impl<S: Scalar> Neg for &Jet<S> {
    type Output = Jet<S>;
    fn neg(self) -> Jet<S> {
        self.map_coefficients(|x| -x)
    }
}

impl<S: Scalar> Neg for Jet<S> {
    type Output = Jet<S>;
    fn neg(self) -> Jet<S> {
        -&self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Jet::<f64>::variable(3.0, 0, 1, 2).unwrap();
        let y = &x * &x;
        assert_eq!(y.value(), &[9.0]);
        assert_eq!(y.grad(0, 0), 6.0);
        assert_eq!(y.hess(0, 0, 0), 2.0);
        let p = y.taylor_predict(&[0.1]).unwrap();
        assert!((p[0] - 9.61).abs() < 1e-12);
    }

    #[test]
    fn exp_at_zero_is_all_ones() {
        let e = Jet::<f64>::variable(0.0, 0, 1, 3).unwrap().exp();
        assert_eq!([e.val(), e.grad(0, 0), e.hess(0, 0, 0), e.third(0, 0, 0, 0)], [1.0; 4]);
    }

    #[test]
    fn recip_at_two_and_near_zero() {
        let r = Jet::<f64>::variable(2.0, 0, 1, 2).unwrap().recip().unwrap();
        assert_eq!([r.val(), r.grad(0, 0), r.hess(0, 0, 0)], [0.5, -0.25, 0.25]);
        let z = Jet::<f64>::variable(1e-13, 0, 1, 2).unwrap();
        assert!(matches!(z.recip(), Err(Error::NearZeroReciprocal(_))));
    }

    #[test]
    fn order_four_is_refused() {
        assert!(matches!(Jet::<f64>::zeros(4, 1, 1), Err(Error::OrderExceeded { requested: 4, max: 3 })));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Jet::<f64>::variable(1.0, 0, 2, 1).unwrap();
        let b = Jet::<f64>::variable(1.0, 0, 3, 1).unwrap();
        assert!(matches!(a.try_add(&b), Err(Error::DimensionMismatch(_))));
    }
}
