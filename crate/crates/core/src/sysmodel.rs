//! Slow-fast systems, Hamiltonians, the cumulative chart of refinement
//! layers and the normal form `Z_n = ρ_n + A_n z + R_n` it induces.

use std::hash::Hash;
use std::sync::Arc;

use dashmap::DashMap;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, MAX_ORDER};
use crate::norms::{Block, Sampler};
use crate::scalar::{norm2, Scalar};
use crate::table::{Axis, TensorTable};

/// `ẇ = ε W(w, z)`, `ż = Z(w, z)`, evaluable on jets over any scalar.
pub trait SlowFastField: Send + Sync {
    /// `(d_w, d_z)`.
    fn dims(&self) -> (usize, usize);
    /// Returns `(W, Z)` as scalar jets.
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<(Vec<Jet<S>>, Vec<Jet<S>>)>;
}

/// A Hamiltonian `H(w, z)` with `w = (u, v)`, `z = (x, y)`.
pub trait HamiltonianFn: Send + Sync {
    /// Slow and fast degrees of freedom `(d_W, d_Z)`.
    fn dofs(&self) -> (usize, usize);
    fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<Jet<S>>;
}

/// Object-safe face of [`SlowFastField`].
pub trait ErasedField: Send + Sync {
    fn dims(&self) -> (usize, usize);
    fn eval_real(&self, w: &[Jet<f64>], z: &[Jet<f64>]) -> Result<(Vec<Jet<f64>>, Vec<Jet<f64>>)>;
    fn eval_complex(&self, w: &[Jet<C64>], z: &[Jet<C64>]) -> Result<(Vec<Jet<C64>>, Vec<Jet<C64>>)>;
}

impl<T: SlowFastField> ErasedField for T {
    fn dims(&self) -> (usize, usize) {
        SlowFastField::dims(self)
    }
    fn eval_real(&self, w: &[Jet<f64>], z: &[Jet<f64>]) -> Result<(Vec<Jet<f64>>, Vec<Jet<f64>>)> {
        self.eval(w, z)
    }
    fn eval_complex(&self, w: &[Jet<C64>], z: &[Jet<C64>]) -> Result<(Vec<Jet<C64>>, Vec<Jet<C64>>)> {
        self.eval(w, z)
    }
}

/// Object-safe face of [`HamiltonianFn`].
pub trait ErasedHamiltonian: Send + Sync {
    fn dofs(&self) -> (usize, usize);
    fn eval_real(&self, w: &[Jet<f64>], z: &[Jet<f64>]) -> Result<Jet<f64>>;
    fn eval_complex(&self, w: &[Jet<C64>], z: &[Jet<C64>]) -> Result<Jet<C64>>;
}

impl<T: HamiltonianFn> ErasedHamiltonian for T {
    fn dofs(&self) -> (usize, usize) {
        HamiltonianFn::dofs(self)
    }
    fn eval_real(&self, w: &[Jet<f64>], z: &[Jet<f64>]) -> Result<Jet<f64>> {
        self.eval(w, z)
    }
    fn eval_complex(&self, w: &[Jet<C64>], z: &[Jet<C64>]) -> Result<Jet<C64>> {
        self.eval(w, z)
    }
}

fn check_widths(eps: f64, nu0: f64, sigma0: f64) -> Result<()> {
    for (name, v) in [("eps", eps), ("nu0", nu0), ("sigma0", sigma0)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
        }
    }
    Ok(())
}

fn check_fast_box(lo: &[f64], hi: &[f64], n: usize) -> Result<()> {
    if lo.len() != n || hi.len() != n {
        return Err(Error::dims(format!("fast box has {} / {} bounds for dimension {n}", lo.len(), hi.len())));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(*a <= 0.0 && 0.0 <= *b && a < b)) {
        return Err(Error::invalid("fast box must be nondegenerate and contain 0"));
    }
    Ok(())
}

fn axes_box(axes: &[Axis]) -> (Vec<f64>, Vec<f64>) {
    (axes.iter().map(|a| a.lo).collect(), axes.iter().map(|a| a.hi).collect())
}

/// Tabulation axes covering the real part of the width-`pad` neighbourhood.
pub fn padded_axes(axes: &[Axis], pad: f64) -> Vec<Axis> {
    axes.iter()
        .map(|a| if a.is_periodic() { *a } else { Axis { lo: a.lo - pad, hi: a.hi + pad, kind: a.kind } })
        .collect()
}

/// A general slow-fast system with `W` rescaled to unit sup norm.
#[derive(Clone)]
pub struct GeneralSystem {
    pub name: String,
    field: Arc<dyn ErasedField>,
    d_w: usize,
    d_z: usize,
    eps: f64,
    w_scale: f64,
    slow_axes: Vec<Axis>,
    fast_lo: Vec<f64>,
    fast_hi: Vec<f64>,
    nu0: f64,
    sigma0: f64,
}

impl std::fmt::Debug for GeneralSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralSystem")
            .field("name", &self.name)
            .field("d_w", &self.d_w)
            .field("d_z", &self.d_z)
            .field("eps", &self.eps)
            .field("w_scale", &self.w_scale)
            .finish()
    }
}

pub struct GeneralSpec {
    pub name: String,
    pub field: Arc<dyn ErasedField>,
    pub eps: f64,
    /// The slow box `V`; the axis kinds fix how chart layers are tabulated.
    pub slow_axes: Vec<Axis>,
    pub fast_lo: Vec<f64>,
    pub fast_hi: Vec<f64>,
    pub nu0: f64,
    pub sigma0: f64,
}

impl GeneralSystem {
    /// Builds the system and measures `C_W = sup ‖W‖` over the initial
    /// neighbourhood, replacing `(ε, W)` by `(C_W ε, W / C_W)`.
    pub fn new(spec: GeneralSpec, sampler: &Sampler) -> Result<Self> {
        let (d_w, d_z) = spec.field.dims();
        check_widths(spec.eps, spec.nu0, spec.sigma0)?;
        if spec.slow_axes.len() != d_w || d_w == 0 || d_z == 0 {
            return Err(Error::dims(format!("{} slow axes for d_w = {d_w}, d_z = {d_z}", spec.slow_axes.len())));
        }
        check_fast_box(&spec.fast_lo, &spec.fast_hi, d_z)?;
        let mut sys = GeneralSystem {
            name: spec.name,
            field: spec.field,
            d_w,
            d_z,
            eps: spec.eps,
            w_scale: 1.0,
            slow_axes: spec.slow_axes,
            fast_lo: spec.fast_lo,
            fast_hi: spec.fast_hi,
            nu0: spec.nu0,
            sigma0: spec.sigma0,
        };
        let blocks = [sys.slow_block(sys.nu0)?, sys.fast_block(sys.sigma0)?];
        let sup_w = sampler.sup(&blocks, |p| {
            let (w, z) = p.split_at(d_w);
            let (wv, _) = sys.raw_fields(&Jet::variables(w, 0)?, &Jet::variables(z, 0)?)?;
            Ok(norm2(&wv.iter().map(Jet::val).collect::<Vec<_>>()))
        })?;
        if sup_w.value > 0.0 {
            sys.w_scale = sup_w.value;
        }
        Ok(sys)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d_w, self.d_z)
    }
    /// ε in original units.
    pub fn eps(&self) -> f64 {
        self.eps
    }
    /// ε after normalizing `W`.
    pub fn eps_norm(&self) -> f64 {
        self.eps * self.w_scale
    }
    /// The normalizing constant `C_W`.
    pub fn w_scale(&self) -> f64 {
        self.w_scale
    }
    pub fn nu0(&self) -> f64 {
        self.nu0
    }
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
    pub fn slow_axes(&self) -> &[Axis] {
        &self.slow_axes
    }
    pub fn slow_box(&self) -> (Vec<f64>, Vec<f64>) {
        axes_box(&self.slow_axes)
    }
    pub fn fast_box(&self) -> (&[f64], &[f64]) {
        (&self.fast_lo, &self.fast_hi)
    }
    pub fn slow_block(&self, width: f64) -> Result<Block> {
        let (lo, hi) = self.slow_box();
        Block::new(&lo, &hi, width)
    }
    pub fn fast_block(&self, width: f64) -> Result<Block> {
        Block::new(&self.fast_lo, &self.fast_hi, width)
    }

    fn raw_fields<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        if w.len() != self.d_w || z.len() != self.d_z {
            return Err(Error::dims(format!("system expects ({}, {}) arguments", self.d_w, self.d_z)));
        }
        let (wv, zv) = S::eval_field(&*self.field, w, z)?;
        if wv.len() != self.d_w || zv.len() != self.d_z {
            return Err(Error::dims("field returned the wrong number of components"));
        }
        Ok((wv, zv))
    }

    /// `(W / C_W, Z)`.
    pub fn fields<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        let (wv, zv) = self.raw_fields(w, z)?;
        let s = 1.0 / self.w_scale;
        Ok((wv.into_iter().map(|j| j * s).collect(), zv))
    }

    /// The critical manifold `Z(w, ζ) = 0` by Newton's method from `z = 0`.
    pub fn zeroth_order_manifold<S: Scalar>(&self, w: &[S]) -> Result<Vec<S>> {
        let wj: Vec<Jet<S>> = w.iter().map(|&x| Jet::scalar(x, 1, self.d_z)).collect();
        let mut z = vec![S::zero(); self.d_z];
        for _ in 0..100 {
            let zj = Jet::variables(&z, 1)?;
            let (_, f) = self.fields(&wj, &zj)?;
            let val: Vec<S> = f.iter().map(Jet::val).collect();
            let jac: Vec<S> = (0..self.d_z).flat_map(|i| (0..self.d_z).map(move |k| (i, k))).map(|(i, k)| f[i].grad(0, k)).collect();
            let pt: Vec<C64> = w.iter().map(|x| x.to_c64()).collect();
            let step = crate::linalg::checked_lu(&jac, self.d_z, &pt)?.solve(&val);
            for (zi, si) in z.iter_mut().zip(&step) {
                *zi -= *si;
            }
            if norm2(&step) <= 1e-15 * (1.0 + norm2(&z)) {
                return Ok(z);
            }
        }
        Err(Error::NonContraction { iterations: 100, contraction_est: f64::NAN, last_step: f64::NAN })
    }
}

/// A Hamiltonian slow-fast system with `ω = dx∧dy + ε⁻¹ du∧dv`.
#[derive(Clone)]
pub struct HamiltonianSystem {
    pub name: String,
    ham: Arc<dyn ErasedHamiltonian>,
    d_slow: usize,
    d_fast: usize,
    eps: f64,
    slow_axes: Vec<Axis>,
    fast_lo: Vec<f64>,
    fast_hi: Vec<f64>,
    nu0: f64,
    sigma0: f64,
    equilibrium: Option<Vec<f64>>,
}

impl std::fmt::Debug for HamiltonianSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianSystem")
            .field("name", &self.name)
            .field("d_W", &self.d_slow)
            .field("d_Z", &self.d_fast)
            .field("eps", &self.eps)
            .finish()
    }
}

pub struct HamiltonianSpec {
    pub name: String,
    pub ham: Arc<dyn ErasedHamiltonian>,
    pub eps: f64,
    /// `2 d_W` axes ordered `(u, v)`.
    pub slow_axes: Vec<Axis>,
    /// `2 d_Z` bounds ordered `(x, y)`.
    pub fast_lo: Vec<f64>,
    pub fast_hi: Vec<f64>,
    pub nu0: f64,
    pub sigma0: f64,
    /// A slow point `w_e` with `(w_e, 0)` an equilibrium of the level-0 form.
    pub equilibrium: Option<Vec<f64>>,
}

impl HamiltonianSystem {
    pub fn new(spec: HamiltonianSpec) -> Result<Self> {
        let (dw, dz) = spec.ham.dofs();
        check_widths(spec.eps, spec.nu0, spec.sigma0)?;
        if dw == 0 || dz == 0 || spec.slow_axes.len() != 2 * dw {
            return Err(Error::dims(format!("{} slow axes for d_W = {dw}, d_Z = {dz}", spec.slow_axes.len())));
        }
        check_fast_box(&spec.fast_lo, &spec.fast_hi, 2 * dz)?;
        if let Some(e) = &spec.equilibrium {
            if e.len() != 2 * dw {
                return Err(Error::dims("equilibrium has the wrong dimension"));
            }
        }
        Ok(HamiltonianSystem {
            name: spec.name,
            ham: spec.ham,
            d_slow: dw,
            d_fast: dz,
            eps: spec.eps,
            slow_axes: spec.slow_axes,
            fast_lo: spec.fast_lo,
            fast_hi: spec.fast_hi,
            nu0: spec.nu0,
            sigma0: spec.sigma0,
            equilibrium: spec.equilibrium,
        })
    }

    /// `(d_W, d_Z)`.
    pub fn dofs(&self) -> (usize, usize) {
        (self.d_slow, self.d_fast)
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn nu0(&self) -> f64 {
        self.nu0
    }
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
    pub fn slow_axes(&self) -> &[Axis] {
        &self.slow_axes
    }
    pub fn slow_box(&self) -> (Vec<f64>, Vec<f64>) {
        axes_box(&self.slow_axes)
    }
    pub fn fast_box(&self) -> (&[f64], &[f64]) {
        (&self.fast_lo, &self.fast_hi)
    }
    pub fn slow_block(&self, width: f64) -> Result<Block> {
        let (lo, hi) = self.slow_box();
        Block::new(&lo, &hi, width)
    }
    pub fn fast_block(&self, width: f64) -> Result<Block> {
        Block::new(&self.fast_lo, &self.fast_hi, width)
    }
    pub fn equilibrium(&self) -> Option<&[f64]> {
        self.equilibrium.as_deref()
    }

    pub fn eval<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<Jet<S>> {
        if w.len() != 2 * self.d_slow || z.len() != 2 * self.d_fast {
            return Err(Error::dims("Hamiltonian evaluated with the wrong number of arguments"));
        }
        let h = S::eval_ham(&*self.ham, w, z)?;
        if h.dim_out() != 1 {
            return Err(Error::dims("Hamiltonian must be scalar"));
        }
        Ok(h)
    }
}

/// Memo key: layer, jet order and the point rounded to 12 significant digits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey {
    layer: usize,
    order: usize,
    coords: Vec<(i64, i32)>,
}

fn round12(x: f64) -> (i64, i32) {
    if x == 0.0 || !x.is_finite() {
        return (0, 0);
    }
    let e = x.abs().log10().floor() as i32;
    ((x * 10f64.powi(11 - e)).round() as i64, e)
}

impl CacheKey {
    pub fn new<S: Scalar>(layer: usize, order: usize, w: &[S]) -> Self {
        let coords = w.iter().flat_map(|c| [round12(c.re()), round12(c.im())]).collect();
        CacheKey { layer, order, coords }
    }
}

/// Concurrent memo of lazily solved layer jets.
#[derive(Debug, Default)]
pub struct ChartCache {
    pub(crate) real: DashMap<CacheKey, Jet<f64>>,
    pub(crate) complex: DashMap<CacheKey, Jet<C64>>,
}

impl ChartCache {
    pub fn len(&self) -> usize {
        self.real.len() + self.complex.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn clear(&self) {
        self.real.clear();
        self.complex.clear();
    }
}

/// How chart layers are stored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChartMode {
    /// Each layer is re-solved per point (memoized). Exact, but every level
    /// of nesting costs one derivative order, so depth is limited to three.
    Lazy,
    /// Each layer is interpolated on the slow box padded by ν₀.
    Tabulated,
}

#[derive(Clone, Debug)]
enum Layer {
    Lazy,
    Table(TensorTable),
}

/// The cumulative graph transform `z_0 = z + ζ_*(w)`.
#[derive(Debug)]
pub struct Chart {
    system: Arc<GeneralSystem>,
    mode: ChartMode,
    layers: Vec<Layer>,
    cumulative: Vec<TensorTable>,
    table_axes: Vec<Axis>,
    cache: ChartCache,
    use_cache: bool,
}

impl Chart {
    pub fn new(system: Arc<GeneralSystem>, mode: ChartMode) -> Self {
        let table_axes = padded_axes(system.slow_axes(), system.nu0());
        Chart { system, mode, layers: Vec::new(), cumulative: Vec::new(), table_axes, cache: ChartCache::default(), use_cache: true }
    }

    pub fn system(&self) -> &Arc<GeneralSystem> {
        &self.system
    }
    pub fn mode(&self) -> ChartMode {
        self.mode
    }
    pub fn len(&self) -> usize {
        self.layers.len()
    }
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
    pub fn cache(&self) -> &ChartCache {
        &self.cache
    }
    pub fn set_cache(&mut self, enabled: bool) {
        self.use_cache = enabled;
        self.cache.clear();
    }
    /// Chebyshev degree of bounded table axes; periodic axes keep their modes.
    /// Only effective before the first layer is added.
    pub fn set_resolution(&mut self, degree: usize) {
        if self.layers.is_empty() {
            self.table_axes = self
                .table_axes
                .iter()
                .map(|a| if a.is_periodic() { *a } else { a.with_resolution(degree) })
                .collect();
        }
    }

    /// Tabulation grid for layers.
    pub fn table_axes(&self) -> &[Axis] {
        &self.table_axes
    }

    /// Append a layer that is solved on demand.
    pub fn push_lazy(&mut self) -> Result<()> {
        if self.mode != ChartMode::Lazy {
            return Err(Error::invalid("lazy layer pushed onto a tabulated chart"));
        }
        self.layers.push(Layer::Lazy);
        Ok(())
    }

    /// Append a tabulated layer with outputs `ζ_n`.
    pub fn push_table(&mut self, t: TensorTable) -> Result<()> {
        if self.mode != ChartMode::Tabulated {
            return Err(Error::invalid("tabulated layer pushed onto a lazy chart"));
        }
        if t.axes() != self.table_axes.as_slice() || t.n_out() != self.system.dims().1 {
            return Err(Error::dims("layer table does not match the chart grid"));
        }
        let cum = match self.cumulative.last() {
            Some(c) => c.add(&t)?,
            None => t.clone(),
        };
        self.cumulative.push(cum);
        self.layers.push(Layer::Table(t));
        Ok(())
    }

    /// Keep the first `n` layers.
    pub fn truncate(&mut self, n: usize) {
        self.layers.truncate(n);
        self.cumulative.truncate(n);
        self.cache.real.retain(|k, _| k.layer < n);
        self.cache.complex.retain(|k, _| k.layer < n);
    }

    /// Jet of `ζ_*` over all layers.
    pub fn eval<S: Scalar>(&self, w: &[S], order: usize) -> Result<Jet<S>> {
        self.eval_prefix(self.layers.len(), w, order)
    }

    /// Jet of the sum of the first `level` layers.
    pub fn eval_prefix<S: Scalar>(&self, level: usize, w: &[S], order: usize) -> Result<Jet<S>> {
        let (d_w, d_z) = self.system.dims();
        if w.len() != d_w {
            return Err(Error::dims(format!("chart expects {d_w} slow coordinates, got {}", w.len())));
        }
        if level > self.layers.len() {
            return Err(Error::invalid(format!("chart has {} layers, level {level} requested", self.layers.len())));
        }
        if level == 0 {
            return Jet::zeros(order, d_w, d_z);
        }
        match self.mode {
            ChartMode::Tabulated => self.cumulative[level - 1].eval_jet(w, order),
            ChartMode::Lazy => {
                let mut acc = self.layer_jet(0, w, order)?;
                for k in 1..level {
                    acc = acc.try_add(&self.layer_jet(k, w, order)?)?;
                }
                Ok(acc)
            }
        }
    }

    /// Jet of the single layer `ζ_k`.
    pub fn layer_jet<S: Scalar>(&self, k: usize, w: &[S], order: usize) -> Result<Jet<S>> {
        match self.layers.get(k) {
            None => Err(Error::invalid(format!("layer {k} does not exist"))),
            Some(Layer::Table(t)) => t.eval_jet(w, order),
            Some(Layer::Lazy) => {
                if order > MAX_ORDER {
                    return Err(Error::OrderExceeded { requested: order, max: MAX_ORDER });
                }
                let key = CacheKey::new(k, order, w);
                if self.use_cache {
                    if let Some(j) = S::chart_cache(&self.cache).get(&key) {
                        return Ok(j.clone());
                    }
                }
                let res = crate::refine_general::solve_layer(&self.view(k)?, w, crate::refine_general::SOLVER_TOL, order)?;
                if self.use_cache {
                    S::chart_cache(&self.cache).insert(key, res.zeta.clone());
                }
                Ok(res.zeta)
            }
        }
    }

    /// The layer table (tabulated charts).
    pub fn layer_table(&self, k: usize) -> Option<&TensorTable> {
        match self.layers.get(k) {
            Some(Layer::Table(t)) => Some(t),
            _ => None,
        }
    }

    /// Normal form after the first `level` layers.
    pub fn view(&self, level: usize) -> Result<NormalFormView<'_>> {
        if level > self.layers.len() {
            return Err(Error::invalid(format!("chart has {} layers, level {level} requested", self.layers.len())));
        }
        Ok(NormalFormView { chart: self, level })
    }
}

/// Normal form of the general system at a given level; checks that the
/// chart belongs to `system`.
pub fn decompose<'a>(system: &GeneralSystem, chart: &'a Chart, level: usize) -> Result<NormalFormView<'a>> {
    if system.dims() != chart.system.dims() || system.name != chart.system.name {
        return Err(Error::dims("chart was built for a different system"));
    }
    chart.view(level)
}

/// `Z_n(w, z) = Z(w, ζ_* + z) − ε ∂_w ζ_* · W(w, ζ_* + z)` and its pieces.
#[derive(Clone, Copy)]
pub struct NormalFormView<'a> {
    chart: &'a Chart,
    level: usize,
}

impl<'a> NormalFormView<'a> {
    pub fn level(&self) -> usize {
        self.level
    }
    pub fn system(&self) -> &GeneralSystem {
        &self.chart.system
    }
    pub fn chart(&self) -> &'a Chart {
        self.chart
    }

    /// `(W_n, Z_n)` at jet arguments sharing order and input dimension.
    pub fn fields<S: Scalar>(&self, w: &[Jet<S>], z: &[Jet<S>]) -> Result<(Vec<Jet<S>>, Vec<Jet<S>>)> {
        let sys = &self.chart.system;
        let (d_w, d_z) = sys.dims();
        if w.len() != d_w || z.len() != d_z {
            return Err(Error::dims("normal form evaluated with the wrong number of arguments"));
        }
        if self.level == 0 {
            return sys.fields(w, z);
        }
        let (p, m) = (w[0].order(), w[0].dim_in());
        let wv: Vec<S> = w.iter().map(Jet::val).collect();
        let constant = w.iter().all(Jet::is_constant);
        let (zeta, dzeta): (Vec<Jet<S>>, Vec<Vec<Jet<S>>>) = if constant {
            let c = self.chart.eval_prefix(self.level, &wv, 1)?;
            let lift = |j: &Jet<S>| -> Result<Vec<Jet<S>>> {
                j.value().iter().map(|&v| Jet::constant(&[v], p, m)).collect()
            };
            let dz = (0..d_w).map(|a| lift(&c.partial(a)?)).collect::<Result<_>>()?;
            (lift(&c)?, dz)
        } else {
            let c = self.chart.eval_prefix(self.level, &wv, p + 1)?;
            let dz = (0..d_w).map(|a| Ok(c.partial(a)?.compose(w)?.components())).collect::<Result<_>>()?;
            (c.compose(w)?.truncate(p).components(), dz)
        };
        let shifted: Vec<Jet<S>> = zeta.iter().zip(z).map(|(a, b)| a.try_add(b)).collect::<Result<_>>()?;
        let (wf, zf) = sys.fields(w, &shifted)?;
        let eps = sys.eps_norm();
        let mut zn = zf;
        for (i, zi) in zn.iter_mut().enumerate() {
            for (a, wa) in wf.iter().enumerate() {
                *zi = zi.try_sub(&(dzeta[a][i].try_mul(wa)? * eps))?;
            }
        }
        Ok((wf, zn))
    }

    /// `ρ_n(w)`.
    pub fn rho<S: Scalar>(&self, w: &[S]) -> Result<Vec<S>> {
        let d_z = self.system().dims().1;
        let wj = Jet::variables(w, 0)?;
        let zj: Vec<Jet<S>> = (0..d_z).map(|_| Jet::scalar(S::zero(), 0, w.len())).collect();
        Ok(self.fields(&wj, &zj)?.1.iter().map(Jet::val).collect())
    }

    /// Jet of `ρ_n` in `w`.
    pub fn rho_jet<S: Scalar>(&self, w: &[S], order: usize) -> Result<Jet<S>> {
        let d_z = self.system().dims().1;
        let wj = Jet::variables(w, order)?;
        let zj: Vec<Jet<S>> = (0..d_z).map(|_| Jet::scalar(S::zero(), order, w.len())).collect();
        Jet::stack(&self.fields(&wj, &zj)?.1)
    }

    /// `(Z_n(w, z), ∂_z Z_n(w, z))`, the matrix row-major.
    pub fn linearize<S: Scalar>(&self, w: &[S], z: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let d_z = self.system().dims().1;
        let wj: Vec<Jet<S>> = w.iter().map(|&x| Jet::scalar(x, 1, d_z)).collect();
        let (_, f) = self.fields(&wj, &Jet::variables(z, 1)?)?;
        let val = f.iter().map(Jet::val).collect();
        let jac = (0..d_z).flat_map(|i| (0..d_z).map(move |k| (i, k))).map(|(i, k)| f[i].grad(0, k)).collect();
        Ok((val, jac))
    }

    /// `(ρ_n(w), A_n(w))`.
    pub fn rho_and_a<S: Scalar>(&self, w: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let d_z = self.system().dims().1;
        self.linearize(w, &vec![S::zero(); d_z])
    }

    pub fn a_matrix<S: Scalar>(&self, w: &[S]) -> Result<Vec<S>> {
        Ok(self.rho_and_a(w)?.1)
    }

    /// `R_n(w, z) = Z_n(w, z) − ρ_n(w) − A_n(w) z`.
    pub fn remainder<S: Scalar>(&self, w: &[S], z: &[S]) -> Result<Vec<S>> {
        let (rho, a) = self.rho_and_a(w)?;
        let zn = self.z_at(w, z)?;
        let az = crate::linalg::mat_vec(&a, z.len(), z.len(), z);
        Ok(zn.iter().zip(&rho).zip(&az).map(|((f, r), q)| *f - *r - *q).collect())
    }

    /// `Z_n(w, z)`.
    pub fn z_at<S: Scalar>(&self, w: &[S], z: &[S]) -> Result<Vec<S>> {
        let (wj, zj) = (Jet::variables(w, 0)?, Jet::variables(z, 0)?);
        let zj: Vec<Jet<S>> = zj.into_iter().map(|j| Jet::scalar(j.val(), 0, w.len())).collect();
        Ok(self.fields(&wj, &zj)?.1.iter().map(Jet::val).collect())
    }

    /// `W_n(w, z)` (normalized).
    pub fn w_at<S: Scalar>(&self, w: &[S], z: &[S]) -> Result<Vec<S>> {
        let wj = Jet::variables(w, 0)?;
        let zj: Vec<Jet<S>> = z.iter().map(|&x| Jet::scalar(x, 0, w.len())).collect();
        Ok(self.fields(&wj, &zj)?.0.iter().map(Jet::val).collect())
    }
}

/// Per-level certificate of the general refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub level: usize,
    pub eps: f64,
    pub eps_norm: f64,
    pub delta: f64,
    pub k: f64,
    pub c_r: f64,
    pub c_z: f64,
    pub nu: f64,
    pub sigma: f64,
    pub xi: f64,
    pub kappa: f64,
    /// `δ / ε_norm`; bounded when `δ₀ = O(ε)`.
    pub delta_over_eps: f64,
    /// `ξ ≥ 2Kδ`.
    pub xi_ok: bool,
    /// `δ ≤ ½ κ² K⁻² C_R⁻¹`.
    pub delta_ok: bool,
    /// `ε < 2κ²`.
    pub eps_ok: bool,
    pub hypothesis_ok: bool,
    /// Measured `δ_n / δ_{n-1}` exceeded the predicted `εK/ξ`.
    pub ratio_exceeded: bool,
    /// Largest interpolation error of the layer built at this level.
    pub interp_error: Option<f64>,
}

/// Level-0 certificate; fails with `SingularLinearPart` at the offending sample.
pub fn validate_assumptions(system: &Arc<GeneralSystem>, sampler: &Sampler, xi0: f64) -> Result<Certificate> {
    let chart = Chart::new(system.clone(), ChartMode::Lazy);
    crate::refine_general::certify(&chart.view(0)?, system.nu0(), system.sigma0(), xi0, sampler)
}
