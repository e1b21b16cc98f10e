//! Batch driver: a TOML run description in, CSV and JSON reports out.
//!
//! ```toml
//! system = "neishtadt"
//! mode = "hamiltonian"          # general | hamiltonian | persistence
//! eps = [0.04, 0.03, 0.02]
//!
//! [params]                      # see ExampleParams
//! pinned = true
//!
//! [refine]                      # defaults depend on the system
//! nu_floor = 0.02
//! sigma_floor = 0.02
//! xi0 = 0.3
//! stop = "adaptive"             # or "fixed"
//!
//! [sampling]
//! samples = 2048
//! seed = 24301
//! ```
//!
//! Exit status: 0 on success, 2 when some ε is inadmissible, i.e. the
//! step hypotheses already fail at level 0 (reports are still written),
//! 1 on error or a `verify` mismatch. A hypothesis failure after at least one step is an ordinary
//! adaptive stop.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::examples::{self, BuiltSystem, ExampleParams};
use crate::norms::{DecayFit, DecayReport, Sampler, DEFAULT_SAMPLES, DEFAULT_SEED, PREFACTOR_POWER};
use crate::persistence::{gap_set_scan, GapScan, RotorFamily};
use crate::refine_general::{self, Halt, RefineOptions, StopMode};
use crate::refine_ham::{self, HamOutcome, HamRefineOptions, LevelCheck, PinningReport};
use crate::sysmodel::{GeneralSystem, HamiltonianSystem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;

pub const PERSISTENCE_SYSTEMS: [&str; 2] = ["rotor", "rotor_two_modes"];

#[derive(Parser, Debug)]
#[command(name = "slowfast", version, about = "Refine slow manifolds of slow-fast systems and report their error fields")]
pub struct Cli {
    /// Print the built-in system names and exit.
    #[arg(long)]
    pub list_systems: bool,
    /// Worker threads (falls back to MF_THREADS, then all cores).
    #[arg(long, global = true, env = "MF_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Refine every ε of the config and write decay/fit/manifold reports.
    Run(CommandArgs),
    /// Compare refinement results against closed-form references.
    Verify(CommandArgs),
}

#[derive(clap::Args, Debug)]
pub struct CommandArgs {
    pub config: PathBuf,
    /// Output directory (default: `output` of the config, else `out/` next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    General,
    Hamiltonian,
    Persistence,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopKind {
    #[default]
    Adaptive,
    Fixed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub nu_floor: Option<f64>,
    pub sigma_floor: Option<f64>,
    pub xi0: Option<f64>,
    pub stop: StopKind,
    pub degree: Option<usize>,
    pub max_levels: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub samples: usize,
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection { samples: DEFAULT_SAMPLES, seed: DEFAULT_SEED }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    /// Random points per level for the transform checks.
    pub points: usize,
    /// Grid points per slow axis in `manifold.csv`.
    pub manifold_points: usize,
}

impl Default for ChecksSection {
    fn default() -> Self {
        ChecksSection { points: 50, manifold_points: 33 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersistenceSection {
    pub e_min: f64,
    pub e_max: f64,
    #[serde(default = "default_energy_points")]
    pub points: usize,
    pub mu: f64,
    #[serde(default = "default_modulation")]
    pub modulation: f64,
}

fn default_energy_points() -> usize {
    100
}
fn default_modulation() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    pub mode: Mode,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub params: ExampleParams,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub checks: ChecksSection,
    pub persistence: Option<PersistenceSection>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.eps.is_empty() {
            bail!("config: `eps` must list at least one value");
        }
        if let Some(e) = self.eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            bail!("config: `eps` values must be positive, found {e}");
        }
        for (key, v) in [("nu_floor", self.refine.nu_floor), ("sigma_floor", self.refine.sigma_floor), ("xi0", self.refine.xi0)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    bail!("config: `refine.{key}` must be positive, found {v}");
                }
            }
        }
        if self.sampling.samples == 0 {
            bail!("config: `sampling.samples` must be at least 1");
        }
        let general = ["counterexample", "linear_hyperbolic"];
        let ok = match self.mode {
            Mode::General => general.contains(&self.system.as_str()),
            Mode::Hamiltonian => examples::SYSTEMS.contains(&self.system.as_str()) && !general.contains(&self.system.as_str()),
            Mode::Persistence => PERSISTENCE_SYSTEMS.contains(&self.system.as_str()),
        };
        if !ok {
            bail!("config: system `{}` is not available in {:?} mode (see --list-systems)", self.system, self.mode);
        }
        if self.mode == Mode::Persistence {
            let p = self.persistence.as_ref().context("config: persistence mode needs a [persistence] section")?;
            if !(p.e_max > p.e_min) || p.points < 2 || !(p.mu > 0.0) {
                bail!("config: [persistence] needs e_min < e_max, points >= 2 and mu > 0");
            }
        }
        Ok(())
    }

    fn sampler(&self) -> anyhow::Result<Sampler> {
        Ok(Sampler::new(self.sampling.samples, self.sampling.seed)?)
    }

    fn floors(&self) -> anyhow::Result<(f64, f64, f64)> {
        let d = examples::default_refine(&self.system)?;
        Ok((
            self.refine.nu_floor.unwrap_or(d.nu_floor),
            self.refine.sigma_floor.unwrap_or(d.sigma_floor),
            self.refine.xi0.unwrap_or(d.xi0),
        ))
    }

    fn stop_mode(&self) -> StopMode {
        match self.refine.stop {
            StopKind::Adaptive => StopMode::Adaptive,
            StopKind::Fixed => StopMode::FixedN,
        }
    }
}

/// Full round-trip decimal.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Row of `decay.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub eps: f64,
    pub n: usize,
    pub delta: f64,
    pub k: f64,
    pub c_r: f64,
    pub xi: f64,
    pub hypothesis_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub system: String,
    pub mode: Mode,
    pub eps_values: Vec<f64>,
    pub min_delta: Vec<f64>,
    pub chosen_levels: Vec<usize>,
    pub halts: Vec<Halt>,
    pub fit: Option<DecayFit>,
    pub theory_slope: Option<f64>,
    /// Bound on the truncated series tail (`neishtadt` only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_tail_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymplecticReport {
    pub eps: f64,
    pub levels: Vec<LevelCheck>,
    pub max_symplectic_err: f64,
    pub max_energy_err: f64,
    pub max_inverse_err: f64,
    pub pinning: Option<PinningReport>,
    /// The first step violated `K C_D δ ≤ ξ₀² / 8`.
    pub first_step_g_binds: bool,
}

/// What a run produced, for callers embedding the driver.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub rows: Vec<DecayRow>,
    pub fit: Option<FitReport>,
    pub checks: Vec<SymplecticReport>,
    pub gaps: Vec<(f64, GapScan)>,
    pub hypothesis_halt: bool,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.hypothesis_halt {
            EXIT_HYPOTHESIS
        } else {
            EXIT_OK
        }
    }
}

struct EpsRun {
    rows: Vec<DecayRow>,
    decay: DecayReport,
    halt: Halt,
    chosen: usize,
    manifold: Vec<Vec<f64>>,
    checks: Option<SymplecticReport>,
}

fn slow_grid(lo: &[f64], hi: &[f64], points: usize) -> Vec<Vec<f64>> {
    let points = points.max(2);
    let mut out = vec![vec![]];
    for (a, b) in lo.iter().zip(hi) {
        let axis: Vec<f64> = (0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect();
        out = out.into_iter().flat_map(|p| axis.iter().map(move |x| [p.clone(), vec![*x]].concat())).collect();
    }
    out
}

fn run_general(cfg: &RunConfig, eps: f64, sys: Arc<GeneralSystem>) -> anyhow::Result<EpsRun> {
    let (nf, sf, xi0) = cfg.floors()?;
    let mut opts = RefineOptions::new(nf, sf, xi0);
    opts.mode = cfg.stop_mode();
    opts.sampler = cfg.sampler()?;
    if let Some(d) = cfg.refine.degree.or(cfg.params.degree) {
        opts.degree = d;
    }
    if let Some(m) = cfg.refine.max_levels {
        opts.max_levels = m;
    }
    let out = refine_general::refine(sys.clone(), &opts)?;
    let rows = out
        .certificates
        .iter()
        .map(|c| DecayRow { eps, n: c.level, delta: c.delta, k: c.k, c_r: c.c_r, xi: c.xi, hypothesis_ok: c.hypothesis_ok })
        .collect();
    let (lo, hi) = sys.slow_box();
    let mut manifold = Vec::new();
    for w in slow_grid(&lo, &hi, cfg.checks.manifold_points) {
        let z = out.chart.eval(&w, 0)?;
        manifold.push([vec![eps], w, z.value().to_vec()].concat());
    }
    Ok(EpsRun { rows, decay: out.decay, halt: out.halt, chosen: out.chosen_level, manifold, checks: None })
}

/// Original coordinates of the refined manifold point over `w₊`.
pub fn ham_manifold_point(out: &HamOutcome, wp: &[f64]) -> crate::Result<(Vec<f64>, Vec<f64>)> {
    let d = out.levels[0].fast_dim();
    let (mut w, mut z) = (wp.to_vec(), vec![0.0; d]);
    for layer in out.layers.iter().rev() {
        (w, z) = layer.apply_generating_step(&w, &z)?;
    }
    Ok((w, z))
}

fn run_hamiltonian(cfg: &RunConfig, eps: f64, sys: Arc<HamiltonianSystem>) -> anyhow::Result<EpsRun> {
    let (nf, sf, xi0) = cfg.floors()?;
    let mut opts = HamRefineOptions::new(nf, sf, xi0);
    opts.mode = cfg.stop_mode();
    opts.sampler = cfg.sampler()?;
    opts.degree = cfg.refine.degree;
    if let Some(m) = cfg.refine.max_levels {
        opts.max_levels = m;
    }
    let out = refine_ham::refine_ham(sys.clone(), &opts)?;
    let rows = out
        .certificates
        .iter()
        .map(|c| DecayRow { eps, n: c.level, delta: c.delta, k: c.k, c_r: c.c_r, xi: c.xi, hypothesis_ok: c.hypothesis_ok })
        .collect();
    let levels = refine_ham::check_levels(&out, cfg.checks.points, cfg.sampling.seed)?;
    let fold = |f: fn(&LevelCheck) -> f64| levels.iter().map(f).fold(0.0, f64::max);
    let pinning = match sys.equilibrium() {
        Some(e) => Some(refine_ham::check_equilibrium_pinned(&out.levels, e)?),
        None => None,
    };
    let checks = SymplecticReport {
        eps,
        max_symplectic_err: fold(|c| c.symplectic_err),
        max_energy_err: fold(|c| c.energy_err),
        max_inverse_err: fold(|c| c.inverse_err),
        levels,
        pinning,
        first_step_g_binds: out.first_step_g_binds,
    };
    let (lo, hi) = sys.slow_box();
    let mut manifold = Vec::new();
    for wp in slow_grid(&lo, &hi, cfg.checks.manifold_points) {
        let (w, z) = ham_manifold_point(&out, &wp)?;
        manifold.push([vec![eps], wp, w, z].concat());
    }
    Ok(EpsRun { rows, decay: out.decay.clone(), halt: out.halt, chosen: out.chosen_level, manifold, checks: Some(checks) })
}

fn rotor(cfg: &RunConfig, eps: f64) -> anyhow::Result<(RotorFamily, Vec<f64>, f64)> {
    let p = cfg.persistence.as_ref().context("missing [persistence] section")?;
    let fam = match cfg.system.as_str() {
        "rotor" => RotorFamily::one_mode(eps, p.modulation, p.mu),
        "rotor_two_modes" => RotorFamily::two_modes(eps, p.modulation, p.mu),
        other => bail!("unknown persistence system `{other}`"),
    };
    let grid = (0..p.points).map(|i| p.e_min + (p.e_max - p.e_min) * i as f64 / (p.points - 1) as f64).collect();
    Ok((fam, grid, p.mu))
}

fn write(dir: &Path, name: &str, body: &str, files: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    files.push(path);
    Ok(())
}

fn json<T: Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Execute `cfg` and write reports into `out`.
pub fn run_config(cfg: &RunConfig, out: &Path) -> anyhow::Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = RunSummary::default();
    if cfg.mode == Mode::Persistence {
        return run_persistence(cfg, out, summary);
    }
    let sampler = cfg.sampler()?;
    let runs: Vec<EpsRun> = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let built = examples::build(&cfg.system, eps, &cfg.params, &sampler)?;
            match built {
                BuiltSystem::General(s) => run_general(cfg, eps, s),
                BuiltSystem::Hamiltonian(s) => run_hamiltonian(cfg, eps, s),
            }
            .with_context(|| format!("eps = {eps}"))
        })
        .collect::<anyhow::Result<_>>()?;

    let mut csv = String::from("eps,n,delta_n,K_n,C_Rn,xi_n,hypothesis_ok\n");
    for r in runs.iter().flat_map(|r| &r.rows) {
        writeln!(csv, "{},{},{},{},{},{},{}", num(r.eps), r.n, num(r.delta), num(r.k), num(r.c_r), num(r.xi), r.hypothesis_ok)?;
    }
    write(out, "decay.csv", &csv, &mut summary.files)?;

    let combined = DecayReport::combine(&runs.iter().map(|r| r.decay.clone()).collect::<Vec<_>>(), PREFACTOR_POWER)?;
    let fit = FitReport {
        system: cfg.system.clone(),
        mode: cfg.mode,
        eps_values: combined.eps_values.clone(),
        min_delta: combined.min_delta.clone(),
        chosen_levels: runs.iter().map(|r| r.chosen).collect(),
        halts: runs.iter().map(|r| r.halt).collect(),
        fit: combined.fit.clone(),
        theory_slope: combined.theory_slope,
        series_tail_bound: (cfg.system == "neishtadt")
            .then(|| examples::neishtadt_tail_bound(cfg.params.n_terms.unwrap_or(examples::DEFAULT_TERMS))),
    };
    write(out, "fit.json", &json(&fit)?, &mut summary.files)?;

    let width = runs.first().and_then(|r| r.manifold.first()).map_or(1, Vec::len);
    let header = match cfg.mode {
        Mode::General => manifold_header_general(width),
        _ => manifold_header_ham(width),
    };
    let mut mcsv = header + "\n";
    for row in runs.iter().flat_map(|r| &r.manifold) {
        mcsv += &row.iter().map(|v| num(*v)).collect::<Vec<_>>().join(",");
        mcsv.push('\n');
    }
    write(out, "manifold.csv", &mcsv, &mut summary.files)?;

    if cfg.mode == Mode::Hamiltonian {
        let checks: Vec<SymplecticReport> = runs.iter().filter_map(|r| r.checks.clone()).collect();
        write(out, "symplectic_checks.json", &json(&checks)?, &mut summary.files)?;
        summary.checks = checks;
    }
    summary.hypothesis_halt = runs.iter().any(|r| r.halt == Halt::Hypothesis && r.rows.len() == 1);
    summary.rows = runs.into_iter().flat_map(|r| r.rows).collect();
    summary.fit = Some(fit);
    Ok(summary)
}

fn manifold_header_general(width: usize) -> String {
    // eps, w (d_w), zeta (d_z); built-in general systems have d_w = d_z = 1.
    let d = (width - 1) / 2;
    let mut h = String::from("eps");
    (0..d).for_each(|i| h += &format!(",w_{i}"));
    (0..width - 1 - d).for_each(|i| h += &format!(",zeta_{i}"));
    h
}

fn manifold_header_ham(width: usize) -> String {
    // eps, w_plus (s), w (s), z (width - 1 - 2s) with s = 2.
    let s = 2;
    let mut h = String::from("eps");
    (0..s).for_each(|i| h += &format!(",wplus_{i}"));
    (0..s).for_each(|i| h += &format!(",w_{i}"));
    (0..width.saturating_sub(1 + 2 * s)).for_each(|i| h += &format!(",z_{i}"));
    h
}

fn run_persistence(cfg: &RunConfig, out: &Path, mut summary: RunSummary) -> anyhow::Result<RunSummary> {
    let mut scans = Vec::new();
    for &eps in &cfg.eps {
        let (fam, grid, mu) = rotor(cfg, eps)?;
        scans.push((eps, gap_set_scan(&fam, &grid, mu)?));
    }
    let d = scans.first().and_then(|s| s.1.rows.iter().find_map(|r| r.monodromy.as_ref())).map_or(0, |m| m.multipliers.len());
    let mut csv = String::from("eps,E");
    (0..d).for_each(|i| csv += &format!(",re_lambda_{i},im_lambda_{i}"));
    csv += ",gap_margin,admissible\n";
    for (eps, scan) in &scans {
        for r in &scan.rows {
            let mut line = format!("{},{}", num(*eps), num(r.energy));
            match &r.monodromy {
                Some(m) => {
                    for l in &m.multipliers {
                        line += &format!(",{},{}", num(l[0]), num(l[1]));
                    }
                    line += &format!(",{}", num(m.gap_margin));
                }
                None => {
                    (0..d).for_each(|_| line += ",nan,nan");
                    line += ",nan";
                }
            }
            writeln!(csv, "{line},{}", r.admissible)?;
        }
    }
    write(out, "multipliers.csv", &csv, &mut summary.files)?;
    #[derive(Serialize)]
    struct GapSummary<'a> {
        eps: f64,
        mu: f64,
        threshold: f64,
        excluded: &'a [[f64; 2]],
        excluded_measure: f64,
    }
    let gaps: Vec<GapSummary> = scans
        .iter()
        .map(|(e, s)| GapSummary { eps: *e, mu: s.mu, threshold: s.threshold, excluded: &s.excluded, excluded_measure: s.excluded_measure })
        .collect();
    write(out, "gaps.json", &json(&gaps)?, &mut summary.files)?;
    summary.gaps = scans;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub eps: f64,
    pub quantity: String,
    /// `max |computed − exact|` over the sample points.
    pub max_abs_error: f64,
    /// `max_abs_error / max |exact|`.
    pub max_rel_error: f64,
    pub points: usize,
    /// `max_abs_error ≤ VERIFY_RTOL · max |exact| + VERIFY_ATOL`.
    pub within_tolerance: bool,
}

impl OracleEntry {
    fn new(eps: f64, quantity: &str, pairs: &[(Vec<f64>, Vec<f64>)]) -> Self {
        let scale = pairs.iter().flat_map(|p| &p.1).fold(0.0f64, |a, b| a.max(b.abs()));
        let err = pairs.iter().flat_map(|(g, w)| g.iter().zip(w).map(|(a, b)| (a - b).abs())).fold(0.0f64, f64::max);
        OracleEntry {
            eps,
            quantity: quantity.into(),
            max_abs_error: err,
            max_rel_error: if scale > 0.0 { err / scale } else { err },
            points: pairs.len(),
            within_tolerance: err <= VERIFY_RTOL * scale + VERIFY_ATOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeTrace {
    pub eps: f64,
    /// `|∂_w ζ_n − ε/(1+ε)|` at `w = 0.5`, per level.
    pub errors: Vec<f64>,
    /// Largest ratio of consecutive errors above the rounding floor.
    pub max_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub system: String,
    pub status: String,
    pub rtol: f64,
    pub atol: f64,
    pub all_within_tolerance: bool,
    pub entries: Vec<OracleEntry>,
    pub slope: Vec<SlopeTrace>,
}

const VERIFY_POINTS: usize = 20;
pub const VERIFY_RTOL: f64 = 1e-10;
/// Rounding floor for quantities of high order in ε.
pub const VERIFY_ATOL: f64 = 1e-15;

/// Compare every available oracle and write `verify.json`.
pub fn verify_config(cfg: &RunConfig, out: &Path) -> anyhow::Result<VerifyReport> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let quantities = if cfg.mode == Mode::Persistence { &[][..] } else { examples::quantities(&cfg.system, &cfg.params)? };
    let mut report = VerifyReport {
        system: cfg.system.clone(),
        status: "ok".into(),
        rtol: VERIFY_RTOL,
        atol: VERIFY_ATOL,
        all_within_tolerance: true,
        entries: vec![],
        slope: vec![],
    };
    if quantities.is_empty() {
        report.status = "no oracles".into();
    } else {
        let sampler = cfg.sampler()?;
        for &eps in &cfg.eps {
            verify_eps(cfg, eps, &sampler, quantities, &mut report)?;
        }
        report.all_within_tolerance = report.entries.iter().all(|e| e.within_tolerance);
        if !report.all_within_tolerance {
            report.status = "mismatch".into();
        }
    }
    let mut files = vec![];
    write(out, "verify.json", &json(&report)?, &mut files)?;
    Ok(report)
}

fn verify_eps(cfg: &RunConfig, eps: f64, sampler: &Sampler, quantities: &[&str], report: &mut VerifyReport) -> anyhow::Result<()> {
    let name = cfg.system.as_str();
    let built = examples::build(name, eps, &cfg.params, sampler)?;
    let pts = |lo: &[f64], hi: &[f64]| -> Vec<Vec<f64>> {
        Sampler { samples: VERIFY_POINTS, seed: cfg.sampling.seed }
            .points(&[crate::norms::Block::new(lo, hi, 0.0).expect("valid box")])
            .into_iter()
            .rev()
            .take(VERIFY_POINTS)
            .map(|p| p.iter().map(|c| c.re).collect())
            .collect()
    };
    match built {
        BuiltSystem::General(sys) => {
            let mut chart = crate::sysmodel::Chart::new(sys.clone(), crate::sysmodel::ChartMode::Lazy);
            chart.push_lazy()?;
            chart.push_lazy()?;
            let (lo, hi) = sys.slow_box();
            let points = pts(&lo, &hi);
            for &q in quantities.iter().filter(|q| **q != "manifold_slope") {
                let mut pairs = vec![];
                for w in &points {
                    let got = match q {
                        "zeta0" => chart.layer_jet(0, w, 0)?.value().to_vec(),
                        "zeta1" => chart.layer_jet(1, w, 0)?.value().to_vec(),
                        "rho1" => chart.view(1)?.rho(w)?,
                        "rho2" => chart.view(2)?.rho(w)?,
                        _ => continue,
                    };
                    pairs.push((got, examples::oracle(name, q, eps, &cfg.params, w)?));
                }
                report.entries.push(OracleEntry::new(eps, q, &pairs));
            }
            if quantities.contains(&"manifold_slope") {
                let (nf, sf, xi0) = cfg.floors()?;
                let mut opts = RefineOptions::new(nf, sf, xi0);
                opts.sampler = *sampler;
                let out = refine_general::refine(sys.clone(), &opts)?;
                let exact = examples::oracle(name, "manifold_slope", eps, &cfg.params, &[0.5])?[0];
                let errors: Vec<f64> = (0..=out.chart.len())
                    .map(|n| out.chart.eval_prefix(n, &[0.5], 1).map(|j| (j.grad(0, 0) - exact).abs()))
                    .collect::<crate::Result<_>>()?;
                let max_factor = errors.windows(2).filter(|p| p[0] > 1e-13).map(|p| p[1] / p[0]).fold(0.0, f64::max);
                report.slope.push(SlopeTrace { eps, errors, max_factor });
            }
        }
        BuiltSystem::Hamiltonian(sys) => {
            let (nf, sf, xi0) = cfg.floors()?;
            let mut opts = HamRefineOptions::new(nf, sf, xi0);
            opts.sampler = *sampler;
            let out = refine_ham::refine_ham(sys.clone(), &opts)?;
            let (lo, hi) = sys.slow_box();
            let points = pts(&lo, &hi);
            for &q in quantities {
                let level = match q {
                    "zeta0" => None,
                    _ => Some(q[3..].parse::<usize>()?),
                };
                if level.is_some_and(|n| n >= out.levels.len()) {
                    continue;
                }
                let mut pairs = vec![];
                for w in &points {
                    let got = match level {
                        None => refine_ham::solve_constrained_equilibria(&out.levels[0], w, refine_general::SOLVER_TOL)?.zeta,
                        Some(n) => out.levels[n].rho(w)?,
                    };
                    pairs.push((got, examples::oracle(name, q, eps, &cfg.params, w)?));
                }
                report.entries.push(OracleEntry::new(eps, q, &pairs));
            }
        }
    }
    Ok(())
}

/// `--list-systems` text.
pub fn list_systems() -> String {
    let mut s = String::new();
    for n in ["counterexample", "linear_hyperbolic"] {
        s += &format!("{n}\tgeneral\n");
    }
    for n in ["neishtadt", "elliptic_pendulum", "two_fast_modes"] {
        s += &format!("{n}\thamiltonian\n");
    }
    for n in PERSISTENCE_SYSTEMS {
        s += &format!("{n}\tpersistence\n");
    }
    s
}

fn output_dir(args: &CommandArgs, cfg: &RunConfig) -> PathBuf {
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    match (&args.out, &cfg.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => base.join("out"),
    }
}

/// Run the parsed command line; returns the process exit status.
pub fn execute(cli: Cli) -> i32 {
    if cli.list_systems {
        print!("{}", list_systems());
        return EXIT_OK;
    }
    let Some(cmd) = cli.command else {
        eprintln!("error: expected `run <config>` or `verify <config>` (see --help)");
        return EXIT_ERROR;
    };
    let body = || -> anyhow::Result<i32> {
        let (args, verify) = match &cmd {
            Command::Run(a) => (a, false),
            Command::Verify(a) => (a, true),
        };
        let mut cfg = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.sampling.seed = seed;
        }
        let out = output_dir(args, &cfg);
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            pool = pool.num_threads(n);
        }
        let pool = pool.build()?;
        pool.install(|| {
            if verify {
                let r = verify_config(&cfg, &out)?;
                println!("verify: {} ({} comparisons) -> {}", r.status, r.entries.len(), out.join("verify.json").display());
                Ok(if r.all_within_tolerance { EXIT_OK } else { EXIT_ERROR })
            } else {
                let s = run_config(&cfg, &out)?;
                for f in &s.files {
                    println!("wrote {}", f.display());
                }
                if s.hypothesis_halt {
                    eprintln!("warning: step hypotheses fail at level 0 for some eps; no refinement was possible");
                }
                Ok(s.exit_code())
            }
        })
    };
    match body() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
