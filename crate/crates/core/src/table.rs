//! Tensor-product interpolants on boxes: Chebyshev along bounded axes, real
//! trigonometric series along periodic ones.
//!
//! Coefficients are real because nodes are real; evaluation accepts complex
//! arguments, which is how sup norms over complex strips are sampled. Chart
//! layers are stored this way so that derivatives of any depth of refinement
//! cost one contraction instead of a nested implicit solve.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::Mul;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, MAX_ORDER};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AxisKind {
    /// Polynomial of the given degree on `[lo, hi]`, Lobatto nodes.
    Chebyshev { degree: usize },
    /// Period `hi - lo`, `2 * modes + 1` equispaced nodes.
    Periodic { modes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub kind: AxisKind,
}

impl Axis {
    pub fn chebyshev(lo: f64, hi: f64, degree: usize) -> Self {
        Axis { lo, hi, kind: AxisKind::Chebyshev { degree } }
    }

    pub fn periodic(lo: f64, hi: f64, modes: usize) -> Self {
        Axis { lo, hi, kind: AxisKind::Periodic { modes } }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.kind, AxisKind::Periodic { .. })
    }

    /// Same axis at a different resolution.
    pub fn with_resolution(&self, n: usize) -> Self {
        let kind = match self.kind {
            AxisKind::Chebyshev { .. } => AxisKind::Chebyshev { degree: n },
            AxisKind::Periodic { .. } => AxisKind::Periodic { modes: n },
        };
        Axis { kind, ..*self }
    }

    /// Number of nodes, equal to the number of basis functions.
    pub fn len(&self) -> usize {
        match self.kind {
            AxisKind::Chebyshev { degree } => degree + 1,
            AxisKind::Periodic { modes } => 2 * modes + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo) {
            return Err(Error::invalid(format!("axis [{}, {}] is empty or not finite", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let (mid, half) = (0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo));
        match self.kind {
            AxisKind::Chebyshev { degree: 0 } => vec![mid],
            AxisKind::Chebyshev { degree } => {
                (0..=degree).map(|j| mid + half * (PI * j as f64 / degree as f64).cos()).collect()
            }
            AxisKind::Periodic { .. } => {
                let m = self.len();
                (0..m).map(|j| self.lo + (self.hi - self.lo) * j as f64 / m as f64).collect()
            }
        }
    }

    /// Matrix taking node values to coefficients, row-major.
    fn transform(&self) -> Vec<f64> {
        let n = self.len();
        let mut t = vec![0.0; n * n];
        match self.kind {
            AxisKind::Chebyshev { degree: 0 } => t[0] = 1.0,
            AxisKind::Chebyshev { degree } => {
                let nf = degree as f64;
                for k in 0..n {
                    let ck = if k == 0 || k == degree { 0.5 } else { 1.0 };
                    for j in 0..n {
                        let wj = if j == 0 || j == degree { 0.5 } else { 1.0 };
                        t[k * n + j] = ck * wj * (2.0 / nf) * (PI * (j * k) as f64 / nf).cos();
                    }
                }
            }
            AxisKind::Periodic { modes } => {
                let m = n as f64;
                for j in 0..n {
                    t[j] = 1.0 / m;
                    let th = 2.0 * PI * j as f64 / m;
                    for k in 1..=modes {
                        t[(2 * k - 1) * n + j] = 2.0 / m * (k as f64 * th).cos();
                        t[2 * k * n + j] = 2.0 / m * (k as f64 * th).sin();
                    }
                }
            }
        }
        t
    }

    /// Matrix taking coefficients of `f` to coefficients of `f'`.
    fn derivative_matrix(&self) -> Vec<f64> {
        let n = self.len();
        let mut dm = vec![0.0; n * n];
        match self.kind {
            AxisKind::Chebyshev { .. } => {
                let s = 2.0 / (self.hi - self.lo);
                for k in 0..n {
                    let ck = if k == 0 { 1.0 } else { 2.0 };
                    for j in (k + 1..n).step_by(2) {
                        dm[k * n + j] = ck * j as f64 * s;
                    }
                }
            }
            AxisKind::Periodic { modes } => {
                let w = 2.0 * PI / (self.hi - self.lo);
                for k in 1..=modes {
                    let kw = k as f64 * w;
                    dm[(2 * k - 1) * n + 2 * k] = kw;
                    dm[2 * k * n + 2 * k - 1] = -kw;
                }
            }
        }
        dm
    }

    /// `basis[m][k]`: `m`-th derivative of basis function `k` at `x`.
    fn basis<S: Scalar>(&self, x: S, p: usize) -> Vec<Vec<S>> {
        let n = self.len();
        let mut b = vec![vec![S::zero(); n]; p + 1];
        match self.kind {
            AxisKind::Chebyshev { .. } => {
                let (mid, half) = (0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo));
                let t = (x + (-mid)) * (1.0 / half);
                b[0][0] = S::one();
                if n > 1 {
                    b[0][1] = t;
                    if p >= 1 {
                        b[1][1] = S::one();
                    }
                }
                for k in 1..n.saturating_sub(1) {
                    for m in 0..=p {
                        let mut v = t * b[m][k] * 2.0 - b[m][k - 1];
                        if m > 0 {
                            v += b[m - 1][k] * (2.0 * m as f64);
                        }
                        b[m][k + 1] = v;
                    }
                }
                for (m, row) in b.iter_mut().enumerate().skip(1) {
                    let s = half.powi(-(m as i32));
                    row.iter_mut().for_each(|v| *v = *v * s);
                }
            }
            AxisKind::Periodic { modes } => {
                let w = 2.0 * PI / (self.hi - self.lo);
                let th = (x + (-self.lo)) * w;
                let (c1, s1) = (th.cos(), th.sin());
                let (mut cp, mut sp) = (S::one(), S::zero());
                let (mut c, mut s) = (c1, s1);
                b[0][0] = S::one();
                for k in 1..=modes {
                    let kw = k as f64 * w;
                    // d^m/dx^m cos = (kw)^m cos(. + m pi/2), likewise for sin.
                    let cyc = [c, -s, -c, s];
                    let syc = [s, c, -s, -c];
                    for m in 0..=p {
                        let f = kw.powi(m as i32);
                        b[m][2 * k - 1] = cyc[m] * f;
                        b[m][2 * k] = syc[m] * f;
                    }
                    let (cn, sn) = (c * c1 * 2.0 - cp, s * c1 * 2.0 - sp);
                    cp = c;
                    sp = s;
                    c = cn;
                    s = sn;
                }
            }
        }
        b
    }
}

/// Contract the trailing (contiguous) axis of `data` against `basis`.
fn contract_last<S, T>(data: &[T], n_last: usize, basis: &[S]) -> Vec<S>
where
    S: Scalar + Mul<T, Output = S>,
    T: Copy,
{
    data.chunks_exact(n_last)
        .map(|row| row.iter().zip(basis).fold(S::zero(), |acc, (&c, &b)| acc + b * c))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorTable {
    axes: Vec<Axis>,
    n_out: usize,
    /// `[out][k_0]..[k_{d-1}]`, last axis contiguous.
    coeffs: Vec<f64>,
}

impl TensorTable {
    pub fn zeros(axes: &[Axis], n_out: usize) -> Result<Self> {
        for a in axes {
            a.validate()?;
        }
        if axes.is_empty() {
            return Err(Error::invalid("table with no axes"));
        }
        let size: usize = axes.iter().map(Axis::len).product();
        Ok(TensorTable { axes: axes.to_vec(), n_out, coeffs: vec![0.0; size * n_out] })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Tensor grid of nodes, last axis fastest.
    pub fn grid(axes: &[Axis]) -> Vec<Vec<f64>> {
        let per: Vec<Vec<f64>> = axes.iter().map(Axis::nodes).collect();
        let mut pts = vec![Vec::new()];
        for nodes in &per {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    nodes.iter().map(move |&x| {
                        let mut q = p.clone();
                        q.push(x);
                        q
                    })
                })
                .collect();
        }
        pts
    }

    /// Interpolate values given at [`TensorTable::grid`] points.
    pub fn from_values(axes: &[Axis], n_out: usize, values: &[Vec<f64>]) -> Result<Self> {
        let mut t = Self::zeros(axes, n_out)?;
        let size = t.coeffs.len() / n_out.max(1);
        if values.len() != size || values.iter().any(|v| v.len() != n_out) {
            return Err(Error::dims(format!("{} node values for a grid of {size}", values.len())));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tabulated node values".into()));
        }
        for (node, v) in values.iter().enumerate() {
            for (o, &x) in v.iter().enumerate() {
                t.coeffs[o * size + node] = x;
            }
        }
        let mats: Vec<Vec<f64>> = axes.iter().map(Axis::transform).collect();
        for a in 0..axes.len() {
            t.apply_axis_matrix(a, &mats[a]);
        }
        Ok(t)
    }

    /// Tabulate `f` at the grid nodes.
    pub fn from_fn<F>(axes: &[Axis], n_out: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let values = Self::grid(axes).par_iter().map(|p| f(p)).collect::<Result<Vec<_>>>()?;
        Self::from_values(axes, n_out, &values)
    }

    fn apply_axis_matrix(&mut self, axis: usize, mat: &[f64]) {
        let n = self.axes[axis].len();
        let inner: usize = self.axes[axis + 1..].iter().map(Axis::len).product();
        let outer = self.coeffs.len() / (n * inner);
        let mut fiber = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for (k, f) in fiber.iter_mut().enumerate() {
                    *f = (0..n).map(|j| mat[k * n + j] * self.coeffs[base + j * inner]).sum();
                }
                for (k, f) in fiber.iter().enumerate() {
                    self.coeffs[base + k * inner] = *f;
                }
            }
        }
    }

    /// Table of the partial derivative along `axis`.
    pub fn derivative(&self, axis: usize) -> Result<Self> {
        if axis >= self.axes.len() {
            return Err(Error::dims(format!("derivative along axis {axis} of {}", self.axes.len())));
        }
        let mut t = self.clone();
        t.apply_axis_matrix(axis, &self.axes[axis].derivative_matrix());
        Ok(t)
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.axes != other.axes || self.n_out != other.n_out {
            return Err(Error::dims("tables live on different grids"));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(TensorTable { coeffs, ..self.clone() })
    }

    pub fn scale(&self, c: f64) -> Self {
        TensorTable { coeffs: self.coeffs.iter().map(|a| a * c).collect(), ..self.clone() }
    }

    /// Keep only the listed outputs.
    pub fn select(&self, outputs: &[usize]) -> Result<Self> {
        let size = self.coeffs.len() / self.n_out.max(1);
        let mut coeffs = Vec::with_capacity(size * outputs.len());
        for &o in outputs {
            if o >= self.n_out {
                return Err(Error::dims(format!("output {o} of {}", self.n_out)));
            }
            coeffs.extend_from_slice(&self.coeffs[o * size..(o + 1) * size]);
        }
        Ok(TensorTable { axes: self.axes.clone(), n_out: outputs.len(), coeffs })
    }

    /// Largest coefficient among the top quarter of modes along any axis,
    /// relative to the largest coefficient. Small means resolved.
    pub fn tail_ratio(&self) -> f64 {
        let lens: Vec<usize> = self.axes.iter().map(Axis::len).collect();
        let size: usize = lens.iter().product();
        let (mut top, mut tail) = (0.0f64, 0.0f64);
        for (flat, c) in self.coeffs.iter().enumerate() {
            let mut idx = flat % size;
            let mut in_tail = false;
            for (a, &n) in lens.iter().enumerate().rev() {
                let k = idx % n;
                idx /= n;
                let mode = if self.axes[a].is_periodic() { k.div_ceil(2) } else { k };
                let modes = if self.axes[a].is_periodic() { n / 2 } else { n - 1 };
                if modes >= 4 && 4 * mode > 3 * modes {
                    in_tail = true;
                }
            }
            top = top.max(c.abs());
            if in_tail {
                tail = tail.max(c.abs());
            }
        }
        if top == 0.0 {
            0.0
        } else {
            tail / top
        }
    }

    /// All partial derivatives of total order at most `p`, keyed by multi-index.
    fn derivatives<S: Scalar + Mul<f64, Output = S>>(&self, x: &[S], p: usize) -> Result<HashMap<Vec<u8>, Vec<S>>> {
        let d = self.axes.len();
        if x.len() != d {
            return Err(Error::dims(format!("table of dimension {d} evaluated at {} coordinates", x.len())));
        }
        if p > MAX_ORDER {
            return Err(Error::OrderExceeded { requested: p, max: MAX_ORDER });
        }
        let bases: Vec<Vec<Vec<S>>> = self.axes.iter().zip(x).map(|(a, &xi)| a.basis(xi, p)).collect();
        let last = d - 1;
        let n_last = self.axes[last].len();
        let mut stage: Vec<(Vec<u8>, Vec<S>)> = (0..=p)
            .map(|m| (vec![m as u8], contract_last(&self.coeffs, n_last, &bases[last][m])))
            .collect();
        for a in (0..last).rev() {
            let n = self.axes[a].len();
            let mut next = Vec::new();
            for (alpha, data) in &stage {
                let used: usize = alpha.iter().map(|&m| m as usize).sum();
                for m in 0..=p - used {
                    let mut key = vec![m as u8];
                    key.extend_from_slice(alpha);
                    next.push((key, contract_last(data, n, &bases[a][m])));
                }
            }
            stage = next;
        }
        Ok(stage.into_iter().collect())
    }

    /// Values at `x`.
    pub fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        let mut m = self.derivatives(x, 0)?;
        Ok(m.remove(&vec![0u8; self.axes.len()]).expect("value entry"))
    }

    /// Jet of the interpolant in its own coordinates at `x`.
    pub fn eval_jet<S: Scalar>(&self, x: &[S], order: usize) -> Result<Jet<S>> {
        let d = self.axes.len();
        let ders = self.derivatives(x, order)?;
        let key = |idx: &[usize]| {
            let mut k = vec![0u8; d];
            for &i in idx {
                k[i] += 1;
            }
            k
        };
        let mut j = Jet::zeros(order, d, self.n_out)?;
        for o in 0..self.n_out {
            j.set_value(o, ders[&key(&[])][o]);
            for i in 0..d {
                if order >= 1 {
                    j.set_grad(o, i, ders[&key(&[i])][o]);
                }
                for l in i..d {
                    if order >= 2 {
                        j.set_hess_sym(o, i, l, ders[&key(&[i, l])][o]);
                    }
                    for m in l..d {
                        if order >= 3 {
                            j.set_third_sym(o, i, l, m, ders[&key(&[i, l, m])][o]);
                        }
                    }
                }
            }
        }
        Ok(j)
    }

    /// The interpolant composed with jet arguments.
    pub fn eval_at_jet<S: Scalar>(&self, x: &[Jet<S>]) -> Result<Jet<S>> {
        let first = x.first().ok_or_else(|| Error::dims("table evaluated at no arguments"))?;
        let vals: Vec<S> = x.iter().map(Jet::val).collect();
        self.eval_jet(&vals, first.order())?.compose(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;

    #[test]
    fn chebyshev_reproduces_polynomial_and_derivatives() {
        let ax = [Axis::chebyshev(-1.0, 3.0, 6)];
        let t = TensorTable::from_fn(&ax, 1, |x| Ok(vec![x[0].powi(3) - 2.0 * x[0]])).unwrap();
        let j = t.eval_jet(&[0.7], 3).unwrap();
        assert!((j.val() - (0.343 - 1.4)).abs() < 1e-13);
        assert!((j.grad(0, 0) - (3.0 * 0.49 - 2.0)).abs() < 1e-12);
        assert!((j.hess(0, 0, 0) - 4.2).abs() < 1e-11);
        assert!((j.third(0, 0, 0, 0) - 6.0).abs() < 1e-10);
        let d = t.derivative(0).unwrap().eval(&[0.7]).unwrap();
        assert!((d[0] - (3.0 * 0.49 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn periodic_reproduces_trig_at_complex_points() {
        let ax = [Axis::periodic(-PI, PI, 5)];
        let t = TensorTable::from_fn(&ax, 1, |x| Ok(vec![(3.0 * x[0]).sin() + 0.5 * x[0].cos()])).unwrap();
        let z = C64::new(0.3, 0.4);
        let v = t.eval(&[z]).unwrap()[0];
        let want = (z * 3.0).sin() + z.cos() * 0.5;
        assert!((v - want).norm() < 1e-13);
        let j = t.eval_jet(&[z], 2).unwrap();
        assert!((j.hess(0, 0, 0) - (-(z * 3.0).sin() * 9.0 - z.cos() * 0.5)).norm() < 1e-12);
    }

    #[test]
    fn two_dimensional_mixed_partials() {
        let ax = [Axis::periodic(0.0, 2.0 * PI, 4), Axis::chebyshev(-1.0, 1.0, 4)];
        let t = TensorTable::from_fn(&ax, 2, |x| Ok(vec![x[0].sin() * x[1] * x[1], x[1]])).unwrap();
        let j = t.eval_jet(&[0.4, 0.3], 3).unwrap();
        assert!((j.val() - 0.4f64.sin() * 0.09).abs() < 1e-14);
        assert!((j.hess(0, 0, 1) - 0.4f64.cos() * 0.6).abs() < 1e-13);
        assert!((j.third(0, 0, 1, 1) - 0.4f64.cos() * 2.0).abs() < 1e-12);
        assert!((j.grad(1, 1) - 1.0).abs() < 1e-14);
        let dd = t.derivative(0).unwrap().derivative(1).unwrap().eval(&[0.4, 0.3]).unwrap();
        assert!((dd[0] - 0.4f64.cos() * 0.6).abs() < 1e-13);
    }

    #[test]
    fn tail_ratio_flags_unresolved() {
        let ax = [Axis::chebyshev(-1.0, 1.0, 16)];
        let smooth = TensorTable::from_fn(&ax, 1, |x| Ok(vec![x[0].exp()])).unwrap();
        let rough = TensorTable::from_fn(&ax, 1, |x| Ok(vec![(20.0 * x[0]).sin()])).unwrap();
        assert!(smooth.tail_ratio() < 1e-10);
        assert!(rough.tail_ratio() > 1e-2);
    }
}
