//! Property suite for the slice inequalities behind the rigidity argument.
//!
//! Each check builds instances (fields, slices, intervals, cubes), tests the
//! hypotheses of one inequality on the grid and evaluates its conclusion as
//! a margin, usually `(lhs - rhs) / (1 + |lhs| + |rhs|)`. Instances whose
//! hypotheses fail are skipped and counted.
//!
//! Three kinds of checks:
//! - hard: must hold up to the tolerance; any failure fails the suite,
//! - soft: conclusions that need an unquantified smallness of `tau`; they
//!   are reported but do not fail the suite,
//! - monitor: a constant with no known value is extracted per grid size and
//!   must stay within a factor (default 2) under refinement.
//!
//! Three parameter regimes are used. The lemma regime (`d = 1`, small `tau`)
//! is where the slice estimates are claimed; its length scale `eta0` comes
//! from a scan of the estimate that makes a mass bump pay for itself, and
//! the grid spacing is `eta0 / eta0_cells`. The two energy regimes (`d = 1`
//! and `d = 2`) have a finite optimal half period `h*`, and their boxes are
//! `L = 2 h*`.

use crate::decompose::{lower_bound_report_with, omega, slice_parts, Decomposition, ReportOptions, SlicePrefix};
use crate::error::{param, Result};
use crate::kernel::{kernel_marginal, KernelTable};
use crate::onedim::{optimal_period_search, optimal_profile_for_period};
use crate::par::par_map;
use crate::stripes::direction_distance;
use crate::{make_random_field, make_stripe_field, Params, ScalarField};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

type Field = ScalarField<f64>;

/// Deliberate defects, to check that the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Replaces `omega(t) = 3t^2 - 2t^3` by `3t^2 - t^3`.
    CubicOmega,
}

/// Physical parameters of one regime.
#[derive(Clone, Debug, PartialEq)]
pub struct Regime {
    pub p: f64,
    pub tau: f64,
    pub eps: f64,
}

impl Regime {
    fn params(&self, d: usize, box_len: f64, n_per_unit: f64) -> Result<Params<f64>> {
        Params::new(d, self.p, self.tau, self.eps, box_len, n_per_unit)
    }

    fn offset(&self, d: usize) -> f64 {
        self.tau.powf(1.0 / (self.p - d as f64 - 1.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    /// `1 < upsilon <= 17/16`.
    pub upsilon: f64,
    /// Fixed `eta0`; `None` scans the bump estimate.
    pub eta0: Option<f64>,
    /// Fixed `delta0`; `None` uses `max(a, 2 hg)` with `a = tau^(1/beta)`.
    pub delta0: Option<f64>,
    pub delta: f64,
    pub sigma: f64,
    pub nu: f64,
    /// Cube side as a fraction of the box (snapped to the grid).
    pub cube_fraction: f64,
    pub seeds: Vec<u64>,
    /// Cells per box side of the one-dimensional grids.
    pub sizes_1d: Vec<usize>,
    /// Cells per box side of the two-dimensional grids.
    pub sizes_2d: Vec<usize>,
    /// Grid cells per `eta0` in the lemma regime.
    pub eta0_cells: usize,
    /// Cells per box of the lemma-regime slices.
    pub lemma_sizes: Vec<usize>,
    pub lemma: Regime,
    pub energy_1d: Regime,
    pub energy_2d: Regime,
    /// Optimal half periods; `None` searches for them.
    pub h_star_1d: Option<f64>,
    pub h_star_2d: Option<f64>,
    /// Per-check tolerance overrides.
    pub tolerances: BTreeMap<String, f64>,
    pub default_tolerance: f64,
    /// Allowed ratio of monitor constants across grid sizes.
    pub stability_factor: f64,
    pub threads: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            upsilon: 17.0 / 16.0,
            eta0: None,
            delta0: None,
            delta: 0.01,
            sigma: 0.05,
            nu: 0.1,
            cube_fraction: 0.25,
            seeds: (1..=20).collect(),
            sizes_1d: vec![32, 64],
            sizes_2d: vec![16],
            eta0_cells: 12,
            lemma_sizes: vec![32, 64],
            lemma: Regime {
                p: 3.0,
                tau: 1e-4,
                eps: 1.0,
            },
            energy_1d: Regime {
                p: 3.0,
                tau: 0.9,
                eps: 0.05,
            },
            energy_2d: Regime {
                p: 4.0,
                tau: 0.5,
                eps: 0.1,
            },
            h_star_1d: None,
            h_star_2d: None,
            tolerances: BTreeMap::new(),
            default_tolerance: 1e-9,
            stability_factor: 2.0,
            threads: 1,
            fault: None,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon > 1.0 && self.upsilon <= 17.0 / 16.0) {
            return Err(param("upsilon", format!("need 1 < upsilon <= 17/16, got {}", self.upsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(param("delta", format!("need 0 < delta < 1, got {}", self.delta)));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(param("sigma", format!("need 0 < sigma < 1/2, got {}", self.sigma)));
        }
        if !(self.nu > 0.0) {
            return Err(param("nu", format!("need nu > 0, got {}", self.nu)));
        }
        if !(self.cube_fraction > 0.0 && self.cube_fraction < 1.0) {
            return Err(param("l", format!("need 0 < l/L < 1, got {}", self.cube_fraction)));
        }
        if self.seeds.is_empty() {
            return Err(param("seeds", "at least one seed is needed"));
        }
        if self.sizes_1d.is_empty() || self.sizes_1d.iter().any(|&n| n < 16 || n % 4 != 0) {
            return Err(param("sizes_1d", "need at least one size, each a multiple of 4 and >= 16"));
        }
        if self.sizes_2d.iter().any(|&n| n < 8 || n % 4 != 0) {
            return Err(param("sizes_2d", "sizes must be multiples of 4 and >= 8"));
        }
        if self.eta0_cells < 4 || self.eta0_cells % 2 != 0 {
            return Err(param("eta0_cells", "need an even count >= 4"));
        }
        if self.lemma_sizes.is_empty() || self.lemma_sizes.iter().any(|&n| n < 2 * self.eta0_cells) {
            return Err(param("lemma_sizes", "need at least one size, each holding 2 eta0"));
        }
        if let Some(e) = self.eta0 {
            if !(e > 0.0 && e.is_finite()) {
                return Err(param("eta0", format!("need eta0 > 0, got {e}")));
            }
        }
        if let Some(d0) = self.delta0 {
            let a = self.lemma.offset(1);
            if !(d0 >= a) {
                return Err(param("delta0", format!("need delta0 >= tau^(1/beta) = {a}, got {d0}")));
            }
        }
        for (name, &t) in &self.tolerances {
            if !CHECKS.iter().any(|c| c.names.contains(&name.as_str())) {
                return Err(param("tolerances", format!("unknown check `{name}`")));
            }
            if !(t >= 0.0) {
                return Err(param("tolerances", format!("tolerance of `{name}` must be >= 0")));
            }
        }
        if !(self.default_tolerance >= 0.0) {
            return Err(param("default_tolerance", "must be >= 0"));
        }
        if !(self.stability_factor >= 1.0) {
            return Err(param("stability_factor", "must be >= 1"));
        }
        for (name, r, d) in [("lemma", &self.lemma, 1), ("energy_1d", &self.energy_1d, 1), ("energy_2d", &self.energy_2d, 2)] {
            r.params(d, 1.0, 1.0)
                .map_err(|e| param("regime", format!("{name}: {e}")))?;
        }
        Ok(())
    }

    fn tolerance(&self, name: &str) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(self.default_tolerance)
    }

    fn omega(&self, t: f64) -> f64 {
        match self.fault {
            None => omega(t),
            Some(Fault::CubicOmega) => t * t * (3.0 - t),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Hard,
    Soft,
    Monitor,
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Hard => "hard",
            Self::Soft => "soft",
            Self::Monitor => "monitor",
        }
    }
}

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub kind: CheckKind,
    pub instances: usize,
    /// Instances whose hypotheses failed on the grid.
    pub skipped: usize,
    pub failures: usize,
    /// Smallest margin seen (`+inf` when nothing ran).
    pub worst_margin: f64,
    /// Extracted constant (monitors) or smallest strict margin.
    pub value: Option<f64>,
    pub note: String,
    pub wall_time: Duration,
}

/// Equality ignores the wall time, so two runs of the same configuration
/// compare equal.
impl PartialEq for CheckReport {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.kind == o.kind
            && self.instances == o.instances
            && self.skipped == o.skipped
            && self.failures == o.failures
            && self.worst_margin.to_bits() == o.worst_margin.to_bits()
            && self.value.map(f64::to_bits) == o.value.map(f64::to_bits)
            && self.note == o.note
    }
}

impl CheckReport {
    /// Whether this check counts against the suite.
    pub fn failed(&self) -> bool {
        self.kind != CheckKind::Soft && self.failures > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    /// Sorted by name.
    pub checks: Vec<CheckReport>,
    /// Derived parameters (`eta0`, `h*`, `C*`, ...), sorted by name.
    pub parameters: Vec<(String, f64)>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn hard_failures(&self) -> usize {
        self.checks.iter().filter(|c| c.failed()).map(|c| c.failures).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,kind,instances,skipped,failures,worst_margin,value\n");
        for c in &self.checks {
            let value = c.value.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:e},{}",
                c.name,
                c.kind.name(),
                c.instances,
                c.skipped,
                c.failures,
                c.worst_margin,
                value
            );
        }
        out
    }

    /// Wall time per check; kept apart from the reproducible reports.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("check,wall_seconds\n");
        for c in &self.checks {
            let _ = writeln!(out, "{},{:.3}", c.name, c.wall_time.as_secs_f64());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.parameters {
            let _ = writeln!(s, "{k} = {v:e}");
        }
        s.push('\n');
        for c in &self.checks {
            let status = match (c.kind, c.failures) {
                (_, 0) => "ok",
                (CheckKind::Soft, _) => "violations",
                _ => "FAIL",
            };
            let _ = write!(
                s,
                "{:<32} {:<8} {:<10} instances {:>8}  skipped {:>7}  failures {:>6}  worst {:>11.3e}",
                c.name,
                c.kind.name(),
                status,
                c.instances,
                c.skipped,
                c.failures,
                c.worst_margin
            );
            if let Some(v) = c.value {
                let _ = write!(s, "  value {v:.4e}");
            }
            if !c.note.is_empty() {
                let _ = write!(s, "  ({})", c.note);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\nresult: {}", if self.pass { "pass" } else { "FAIL" });
        s
    }

    /// Writes `verify.txt`, `verify.csv` and `verify_timing.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verify.txt"), self.to_text())?;
        std::fs::write(dir.join("verify.csv"), self.to_csv())?;
        std::fs::write(dir.join("verify_timing.csv"), self.timing_csv())?;
        Ok(())
    }
}

/// Runs every check. Deterministic given the configuration.
pub fn run_suite(config: &VerifyConfig) -> Result<SuiteReport> {
    config.validate()?;
    let setup = Setup::new(config)?;
    let threads = config.threads.max(1);
    let outer = threads.min(CHECKS.len());
    let results = par_map(CHECKS.len(), outer, |k| {
        let start = Instant::now();
        let tallies = (CHECKS[k].run)(&setup);
        let elapsed = start.elapsed();
        let kind = CHECKS[k].kind;
        tallies
            .into_iter()
            .zip(CHECKS[k].names)
            .map(|(t, name)| CheckReport {
                name: name.to_string(),
                kind,
                instances: t.instances,
                skipped: t.skipped,
                failures: t.failures,
                worst_margin: t.worst,
                value: t.value,
                note: t.note,
                wall_time: elapsed,
            })
            .collect::<Vec<_>>()
    });
    let mut checks: Vec<CheckReport> = results.into_iter().flatten().collect();
    checks.sort_by(|a, b| a.name.cmp(&b.name));
    let pass = checks.iter().all(|c| !c.failed());
    Ok(SuiteReport {
        checks,
        parameters: setup.parameters(),
        pass,
    })
}

/// Bump estimate: with `M(a - eta, a + eta) = m`, pairs of length between
/// `3 eta` and `4 eta` give `R(a - eta/2, a + eta/2) >= m (x - 1)` with
/// `x = (ups - 1)/(4 ups) int_{3eta <= |r| <= 4eta} (|r| - 2 eta) Khat(r) dr`.
/// The bump pays for itself once `x >= 2`.
pub fn bump_estimate(params: &Params<f64>, upsilon: f64, eta: f64) -> f64 {
    let g = |r: f64| (r - 2.0 * eta) * kernel_marginal(r, params);
    let out = quadrature::double_exponential::integrate(g, 3.0 * eta, 4.0 * eta, 1e-12);
    (upsilon - 1.0) / (4.0 * upsilon) * 2.0 * out.integral
}

/// Largest `eta >= a` on a geometric scan with `bump_estimate >= 2`.
pub fn scan_eta0(regime: &Regime, upsilon: f64) -> Result<f64> {
    let params = regime.params(1, 1.0, 1.0)?;
    let a = regime.offset(1);
    let steps = 2000;
    let ratio = 1e6f64.powf(1.0 / steps as f64);
    let mut best = None;
    let mut eta = a;
    for _ in 0..=steps {
        if bump_estimate(&params, upsilon, eta) >= 2.0 {
            best = Some(eta);
        }
        eta *= ratio;
    }
    best.ok_or_else(|| {
        param(
            "eta0",
            format!("no eta0 >= tau^(1/beta) = {a} satisfies the bump estimate; lower tau"),
        )
    })
}

struct Tally {
    instances: usize,
    skipped: usize,
    failures: usize,
    worst: f64,
    value: Option<f64>,
    note: String,
}

impl Tally {
    fn new() -> Self {
        Self {
            instances: 0,
            skipped: 0,
            failures: 0,
            worst: f64::INFINITY,
            value: None,
            note: String::new(),
        }
    }

    fn push(&mut self, margin: f64, tol: f64) {
        self.instances += 1;
        self.worst = self.worst.min(margin);
        if !(margin >= -tol) {
            self.failures += 1;
        }
    }

    fn push_strict(&mut self, margin: f64, tol: f64) {
        self.instances += 1;
        self.worst = self.worst.min(margin);
        if !(margin > tol) {
            self.failures += 1;
        }
    }

    fn skip(&mut self) {
        self.skipped += 1;
    }
}

fn rel(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs) / (1.0 + lhs.abs() + rhs.abs())
}

/// A grid of one regime.
struct Grid {
    params: Params<f64>,
    table: KernelTable<f64>,
    /// `C*` at this resolution, for the energy regimes.
    c_star: f64,
}

struct Slice {
    grid: usize,
    prefix: SlicePrefix<f64>,
    r: Vec<f64>,
}

struct EnergyField {
    grid: usize,
    field: Field,
    /// Depends on `x_0` only.
    one_dim: bool,
}

struct Setup<'a> {
    cfg: &'a VerifyConfig,
    eta0: f64,
    delta0: f64,
    h_star_1d: f64,
    h_star_2d: f64,
    lemma_grids: Vec<Grid>,
    lemma_slices: Vec<Slice>,
    energy1: Vec<Grid>,
    energy1_fields: Vec<EnergyField>,
    energy1_slices: Vec<Slice>,
    energy2: Vec<Grid>,
    energy2_fields: Vec<EnergyField>,
    energy2_decomp: Vec<Decomposition<f64>>,
}

impl<'a> Setup<'a> {
    fn new(cfg: &'a VerifyConfig) -> Result<Self> {
        let eta0 = match cfg.eta0 {
            Some(e) => e,
            None => scan_eta0(&cfg.lemma, cfg.upsilon)?,
        };
        let hg = eta0 / cfg.eta0_cells as f64;
        let delta0 = cfg.delta0.unwrap_or_else(|| cfg.lemma.offset(1).max(2.0 * hg));
        let mut lemma_grids = Vec::new();
        for &n in &cfg.lemma_sizes {
            let params = cfg.lemma.params(1, n as f64 * hg, 1.0 / hg)?;
            let table = KernelTable::new(&params)?;
            lemma_grids.push(Grid {
                params,
                table,
                c_star: f64::NAN,
            });
        }
        let mut lemma_fields = Vec::new();
        for (g, grid) in lemma_grids.iter().enumerate() {
            for &seed in &cfg.seeds {
                for f in lemma_generators(&grid.params, seed, cfg.delta, cfg.eta0_cells)? {
                    lemma_fields.push((g, f));
                }
            }
        }
        let lemma_slices = slices_of(&lemma_grids, &lemma_fields, cfg.threads)?;

        let h_star_1d = match cfg.h_star_1d {
            Some(h) => h,
            None => optimal_period_search(&cfg.energy_1d.params(1, 1.0, 40.0)?, 0.2, 5.0)?.h_star,
        };
        let mut energy1 = Vec::new();
        for &n in &cfg.sizes_1d {
            energy1.push(energy_grid(&cfg.energy_1d, 1, 2.0 * h_star_1d, n)?);
        }
        let mut energy1_fields = Vec::new();
        for (g, grid) in energy1.iter().enumerate() {
            for &seed in &cfg.seeds {
                energy1_fields.extend(energy_generators(grid, g, seed)?);
            }
        }
        let pairs: Vec<(usize, Field)> = energy1_fields.iter().map(|f| (f.grid, f.field.clone())).collect();
        let energy1_slices = slices_of(&energy1, &pairs, cfg.threads)?;

        let (mut energy2, mut energy2_fields, mut energy2_decomp) = (Vec::new(), Vec::new(), Vec::new());
        let h_star_2d = if cfg.sizes_2d.is_empty() {
            f64::NAN
        } else {
            let h = match cfg.h_star_2d {
                Some(h) => h,
                None => optimal_period_search(&cfg.energy_2d.params(2, 1.0, 20.0)?, 0.4, 4.0)?.h_star,
            };
            for &n in &cfg.sizes_2d {
                energy2.push(energy_grid(&cfg.energy_2d, 2, 2.0 * h, n)?);
            }
            for (g, grid) in energy2.iter().enumerate() {
                for &seed in &cfg.seeds {
                    energy2_fields.extend(energy_generators(grid, g, seed)?);
                }
            }
            let decomps = par_map(energy2_fields.len(), cfg.threads, |k| {
                let f = &energy2_fields[k];
                Decomposition::new(&f.field, &energy2[f.grid].table, 1)
            });
            for d in decomps {
                energy2_decomp.push(d?);
            }
            h
        };
        Ok(Self {
            cfg,
            eta0,
            delta0,
            h_star_1d,
            h_star_2d,
            lemma_grids,
            lemma_slices,
            energy1,
            energy1_fields,
            energy1_slices,
            energy2,
            energy2_fields,
            energy2_decomp,
        })
    }

    fn parameters(&self) -> Vec<(String, f64)> {
        let mut p = vec![
            ("delta".to_string(), self.cfg.delta),
            ("delta0".to_string(), self.delta0),
            ("eta0".to_string(), self.eta0),
            ("h_star_1d".to_string(), self.h_star_1d),
            ("h_star_2d".to_string(), self.h_star_2d),
            ("lemma_spacing".to_string(), self.eta0 / self.cfg.eta0_cells as f64),
            ("nu".to_string(), self.cfg.nu),
            ("sigma".to_string(), self.cfg.sigma),
            ("upsilon".to_string(), self.cfg.upsilon),
        ];
        for (name, grids) in [("c_star_1d", &self.energy1), ("c_star_2d", &self.energy2)] {
            for g in grids.iter() {
                p.push((format!("{name}_n{}", g.params.cells()), g.c_star));
            }
        }
        p.sort_by(|a, b| a.0.cmp(&b.0));
        p
    }

    /// Every slice used by the positivity checks: one-dimensional fields of
    /// all regimes and all slices of the two-dimensional fields.
    fn all_slices(&self) -> Vec<(SlicePrefix<f64>, &Params<f64>)> {
        let mut out: Vec<(SlicePrefix<f64>, &Params<f64>)> = Vec::new();
        for s in &self.lemma_slices {
            out.push((s.prefix.clone(), &self.lemma_grids[s.grid].params));
        }
        for s in &self.energy1_slices {
            out.push((s.prefix.clone(), &self.energy1[s.grid].params));
        }
        for f in &self.energy2_fields {
            let n = f.field.cells();
            for i in 0..2 {
                for b in 0..n {
                    let x = if i == 0 { b } else { b * n };
                    let prefix = SlicePrefix::new(&f.field, i, x).expect("valid slice");
                    out.push((prefix, &self.energy2[f.grid].params));
                }
            }
        }
        out
    }
}

fn energy_grid(regime: &Regime, d: usize, box_len: f64, n: usize) -> Result<Grid> {
    let params = regime.params(d, box_len, n as f64 / box_len)?;
    let table = KernelTable::new(&params)?;
    let c_star = optimal_profile_for_period(&params, box_len / 2.0)?.energy_density;
    Ok(Grid { params, table, c_star })
}

fn slices_of(grids: &[Grid], fields: &[(usize, Field)], threads: usize) -> Result<Vec<Slice>> {
    let out = par_map(fields.len(), threads, |k| {
        let (g, f) = &fields[k];
        slice_parts(f, 0, 0, &grids[*g].table).map(|(prefix, r, _)| Slice { grid: *g, prefix, r })
    });
    out.into_iter().collect()
}

/// Alternating 1/0 phases between periodic boundaries (sorted, in
/// `[0, L)`), joined by logistic transitions of scale `width` (steps for
/// `width = 0`).
fn run_profile(boundaries: &[f64], box_len: f64, width: f64, x: f64) -> f64 {
    let m = boundaries.len();
    let mut best = (f64::INFINITY, 0.0, 0);
    for (j, &b) in boundaries.iter().enumerate() {
        let t = (x - b + box_len / 2.0).rem_euclid(box_len) - box_len / 2.0;
        if t.abs() < best.0 {
            best = (t.abs(), t, j);
        }
    }
    let (_, t, j) = best;
    // the phase after boundary j is 1 for even j
    let after = if j % 2 == 0 { 1.0 } else { 0.0 };
    let before = if (j + m - 1) % m % 2 == 0 { 1.0 } else { 0.0 };
    let s = if width > 0.0 {
        1.0 / (1.0 + (-t / width).exp())
    } else if t >= 0.0 {
        1.0
    } else {
        0.0
    };
    before + (after - before) * s
}

/// An even number of boundaries with periodic gaps of at least `min_gap`.
fn random_boundaries(box_len: f64, min_gap: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let max_pairs = ((box_len / min_gap) as usize / 2).clamp(1, 3);
    loop {
        let pairs = rng.random_range(1..=max_pairs);
        let mut b: Vec<f64> = (0..2 * pairs).map(|_| rng.random_range(0.0..box_len)).collect();
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let ok = (0..b.len()).all(|k| {
            let next = if k + 1 < b.len() { b[k + 1] } else { b[0] + box_len };
            next - b[k] >= min_gap
        });
        if ok {
            return b;
        }
    }
}

/// Field depending on `x_0` only.
fn profile_field(params: &Params<f64>, f: impl Fn(f64) -> f64) -> Field {
    Field::from_fn(params.clone(), |x| f(x[0]))
}

/// Periodic moving average over `2w + 1` cells.
fn box_filter(vals: &[f64], w: usize) -> Vec<f64> {
    let n = vals.len();
    (0..n)
        .map(|s| (0..=2 * w).map(|j| vals[(s + n + j - w) % n]).sum::<f64>() / (2 * w + 1) as f64)
        .collect()
}

/// Slices for the lemma regime. The grid spacing is fixed by `eta0`, so
/// lengths are in cells.
fn lemma_generators(params: &Params<f64>, seed: u64, delta: f64, eta0_cells: usize) -> Result<Vec<Field>> {
    let n = params.cells();
    let hg = params.spacing();
    let box_len = params.box_len();
    let alpha = params.alpha();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9) ^ n as u64);
    let mk = |v: Vec<f64>| Field::new(params.clone(), v);
    let mut out = vec![make_random_field(params, seed, hg * (1 + seed % 4) as f64)?];
    // resolved transitions, sharp steps and ramps between well separated phases
    let bounds = random_boundaries(box_len, hg * (eta0_cells / 2) as f64, &mut rng);
    let width = alpha * [0.7, 1.0, 1.5][seed as usize % 3];
    out.push(profile_field(params, |x| run_profile(&bounds, box_len, width, x)));
    let steps = profile_field(params, |x| run_profile(&bounds, box_len, 0.0, x));
    out.push(mk(box_filter(steps.values(), 1 + seed as usize % 2))?);
    out.push(steps);
    // two transitions inside a window of 2 eta0 around the middle
    let gap = hg * (1 + seed as usize % (eta0_cells - 1)) as f64;
    let mid = box_len / 2.0;
    let bump = [mid - gap / 2.0, mid + gap / 2.0];
    let edge = if seed % 2 == 0 { alpha } else { 0.0 };
    out.push(profile_field(params, |x| run_profile(&bump, box_len, edge, x)));
    let amp = 0.5 * (1.0 - delta) * (0.2 + 0.8 * (seed as f64 * 0.618_033_988_7).fract());
    let k = 1 + seed % 3;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let low = (0..n)
        .map(|s| 0.5 + amp * (std::f64::consts::TAU * k as f64 * s as f64 / n as f64 + phase).sin())
        .collect();
    out.push(mk(low)?);
    Ok(out)
}

/// Fields for the energy regimes. Shapes are set in units of `L`, so the
/// same seed gives the same shape on every grid.
fn energy_generators(grid: &Grid, g: usize, seed: u64) -> Result<Vec<EnergyField>> {
    let params = &grid.params;
    let d = params.d();
    let n = params.cells();
    let hg = params.spacing();
    let box_len = params.box_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x5851_f42d) ^ d as u64);
    let mut out = Vec::new();
    let mut push = |field: Field, one_dim: bool| out.push(EnergyField { grid: g, field, one_dim });
    let smooth = (box_len / 32.0 * (1 + seed % 3) as f64).max(hg);
    push(make_random_field(params, seed, smooth)?, false);
    let profile = optimal_profile_for_period(params, box_len / 2.0)?;
    let shift = ((seed as f64 * 0.37).fract() * n as f64).round() as isize;
    push(profile.to_field(params, 0)?.rolled(0, shift), true);
    let half = if seed % 2 == 0 { box_len / 2.0 } else { box_len / 4.0 };
    push(make_stripe_field(params, 0, half, box_len * (seed % 5) as f64 / 20.0)?, true);
    let bounds = random_boundaries(box_len, box_len / 16.0, &mut rng);
    let width = box_len / 64.0 * (seed % 3) as f64;
    push(profile_field(params, |x| run_profile(&bounds, box_len, width, x)), true);
    if d == 1 {
        // nearly constant: a dip
        let depth = 0.2 + 0.6 * rng.random_range(0.0..1.0);
        let w = box_len / 32.0 * (1 + seed % 3) as f64;
        let at = rng.random_range(0.0..box_len);
        push(
            profile_field(params, |x| {
                let t = (x - at).rem_euclid(box_len);
                if t < w {
                    1.0 - depth
                } else {
                    1.0
                }
            }),
            true,
        );
    } else {
        // stripes with an interface displaced along x_1
        let amp = box_len * (0.01 + 0.01 * (seed % 4) as f64);
        let width = box_len * (0.02 + 0.02 * (seed % 3) as f64);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let tau = std::f64::consts::TAU;
        push(
            Field::from_fn(params.clone(), |x| {
                let y = x[0] + amp * (tau * x[1] / box_len + phase).sin();
                0.5 + 0.5 * ((tau * y / box_len).sin() / (tau * width / box_len)).tanh()
            }),
            false,
        );
    }
    Ok(out)
}

/// Sum of cell values over `start .. start+len`, periodically.
fn cell_sum(vals: &[f64], start: isize, len: usize) -> f64 {
    let n = vals.len() as isize;
    (0..len as isize).map(|j| vals[(start + j).rem_euclid(n) as usize]).sum()
}

fn at(vals: &[f64], c: isize) -> f64 {
    vals[c.rem_euclid(vals.len() as isize) as usize]
}

/// Snaps `fraction * L` to whole cells, `1 <= k < N`.
fn cube_cells(params: &Params<f64>, fraction: f64) -> usize {
    let n = params.cells();
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

struct CheckSpec {
    /// Names of the tallies the check returns, in order.
    names: &'static [&'static str],
    kind: CheckKind,
    run: fn(&Setup) -> Vec<Tally>,
}

const CHECKS: &[CheckSpec] = &[
    CheckSpec {
        names: &["mm_dominates_jump", "mm_dominates_jump_strict"],
        kind: CheckKind::Hard,
        run: check_jumps,
    },
    CheckSpec {
        names: &["mm_dominates_omega_variation"],
        kind: CheckKind::Hard,
        run: check_omega_variation,
    },
    CheckSpec {
        names: &["omega_quotient"],
        kind: CheckKind::Hard,
        run: check_omega_quotient,
    },
    CheckSpec {
        names: &["window_measure"],
        kind: CheckKind::Hard,
        run: check_window_measure,
    },
    CheckSpec {
        names: &["bump_penalty"],
        kind: CheckKind::Hard,
        run: check_bump_penalty,
    },
    CheckSpec {
        names: &[
            "negative_r_floor",
            "negative_r_jump",
            "negative_r_localized_mass",
            "negative_r_plateau",
        ],
        kind: CheckKind::Hard,
        run: check_negative_r,
    },
    CheckSpec {
        names: &["negative_r_interval_mass"],
        kind: CheckKind::Soft,
        run: check_interval_mass,
    },
    CheckSpec {
        names: &["small_jumps_positive"],
        kind: CheckKind::Soft,
        run: check_small_jumps,
    },
    CheckSpec {
        names: &["cross_v_nonnegative", "cross_w_nonnegative"],
        kind: CheckKind::Hard,
        run: check_cross_terms,
    },
    CheckSpec {
        names: &["lower_bound_residual"],
        kind: CheckKind::Hard,
        run: check_lower_bound,
    },
    CheckSpec {
        names: &["stripe_cross_integral"],
        kind: CheckKind::Hard,
        run: check_stripe_cross_integral,
    },
    CheckSpec {
        names: &["stripe_distance_exact"],
        kind: CheckKind::Hard,
        run: check_stripe_distance,
    },
    CheckSpec {
        names: &["one_dim_slice_balance"],
        kind: CheckKind::Hard,
        run: check_one_dim_balance,
    },
    CheckSpec {
        names: &["slice_balance_margin"],
        kind: CheckKind::Monitor,
        run: check_balance_margin,
    },
    CheckSpec {
        names: &["interval_constant"],
        kind: CheckKind::Monitor,
        run: check_interval_constant,
    },
    CheckSpec {
        names: &["near_constant_floor"],
        kind: CheckKind::Monitor,
        run: check_near_constant,
    },
    CheckSpec {
        names: &["period_average"],
        kind: CheckKind::Soft,
        run: check_period_average,
    },
];

/// `M[s, s+m] >= (u(s+m) - u(s))^2`, and the sharper form for jumps of at
/// most `1 - delta`.
fn check_jumps(st: &Setup) -> Vec<Tally> {
    let (mut weak, mut strict) = (Tally::new(), Tally::new());
    let tw = st.cfg.tolerance("mm_dominates_jump");
    let ts = st.cfg.tolerance("mm_dominates_jump_strict");
    let factor = 1.0 + 2.0 * st.cfg.delta;
    for (prefix, _) in st.all_slices() {
        let n = prefix.cells();
        let u = &prefix.values;
        for s in 0..n {
            for m in 1..=n + n / 2 {
                let du = u[(s + m) % n] - u[s];
                let mass = prefix.window(s, m);
                weak.push(rel(mass, du * du), tw);
                if du.abs() <= 1.0 - st.cfg.delta {
                    strict.push(rel(mass / factor, du * du), ts);
                } else {
                    strict.skip();
                }
            }
        }
    }
    vec![weak, strict]
}

/// `|m| hg M(0, L) = int M[s, s+m] ds >= int |omega(u(s+m)) - omega(u(s))| ds`.
fn check_omega_variation(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("mm_dominates_omega_variation");
    for (prefix, _) in st.all_slices() {
        let n = prefix.cells();
        let hg = prefix.spacing;
        let u = &prefix.values;
        let w: Vec<f64> = u.iter().map(|&v| st.cfg.omega(v)).collect();
        for m in 1..=n + n / 2 {
            let lhs = m as f64 * hg * prefix.total();
            let windows: f64 = (0..n).map(|s| prefix.window(s, m)).sum::<f64>() * hg;
            let var: f64 = (0..n).map(|s| (w[(s + m) % n] - w[s]).abs()).sum::<f64>() * hg;
            t.push(-(lhs - windows).abs() / (1.0 + lhs.abs()), tol);
            t.push(rel(lhs, var), tol);
        }
    }
    vec![t]
}

/// `(omega(a) - omega(b)) / t^2 = 6b(1-b-t)/t + 3 - 2t >= 3 - 2t >= 1`
/// for `a = b + t`, with `>= 1` strict away from `(a, b) = (1, 0)`.
fn check_omega_quotient(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("omega_quotient");
    let k = 400;
    for ib in 0..k {
        for it in 1..=k - ib {
            let b = ib as f64 / k as f64;
            let dt = it as f64 / k as f64;
            let a = b + dt;
            let q = (st.cfg.omega(a) - st.cfg.omega(b)) / (dt * dt);
            let closed = 6.0 * b * (1.0 - b - dt) / dt + 3.0 - 2.0 * dt;
            t.push(-(q - closed).abs() / (1.0 + q.abs()), tol);
            t.push(rel(q, 3.0 - 2.0 * dt), tol);
            t.push(rel(3.0 - 2.0 * dt, 1.0), tol);
            if ib == 0 && it == k {
                t.push(-(q - 1.0).abs(), tol);
            } else {
                t.push_strict(q - 1.0, tol);
            }
        }
    }
    vec![t]
}

/// Whether `(s, rho)` lies in `Omega(a, b)`: the segment between `s` and
/// `s + rho` contains the one between `a` and `b`.
fn in_omega(s: f64, rho: f64, a: f64, b: f64) -> bool {
    let (lo, hi) = if rho >= 0.0 { (s, s + rho) } else { (s + rho, s) };
    lo <= a.min(b) && a.max(b) <= hi
}

/// `in_omega` with `a` read on the torus: its representative is taken in
/// the period starting at the low end of the segment.
fn in_omega_periodic(s: f64, rho: f64, a: f64, b: f64, box_len: f64) -> bool {
    let lo = s.min(s + rho);
    let a = lo + (a - lo).rem_euclid(box_len);
    in_omega(s, rho, a, b)
}

/// `int_s^{s+L} int_R chi_{(s,rho) in Omega(a,b)} db da = |rho| min(|rho|, L)`
/// by midpoint quadrature on a grid that resolves every edge.
fn check_window_measure(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("window_measure");
    let box_len = 1.0;
    let step = box_len / 128.0;
    // s and rho on the quadrature grid, |rho| up to 3L
    for is in 0..128 {
        let s = is as f64 * step;
        for j in 1..=48 {
            for sign in [1.0, -1.0] {
                let rho = sign * j as f64 * box_len / 16.0;
                let b_lo = s - rho.abs() - box_len / 8.0;
                let nb = ((2.0 * rho.abs() + box_len / 4.0) / step).round() as usize;
                let na = (box_len / step).round() as usize;
                let mut count = 0usize;
                for ia in 0..na {
                    let a = s + (ia as f64 + 0.5) * step;
                    for ib in 0..nb {
                        let b = b_lo + (ib as f64 + 0.5) * step;
                        if in_omega_periodic(s, rho, a, b, box_len) {
                            count += 1;
                        }
                    }
                }
                let numeric = count as f64 * step * step;
                let g = rho.abs() * rho.abs().min(box_len);
                t.push(-(numeric - g).abs() / (1.0 + g), tol);
            }
        }
    }
    vec![t]
}

/// Where `M(a - eta0, a + eta0) >= k ups` with `k >= 1`,
/// `R(a - eta0/2, a + eta0/2) >= k ups`.
fn check_bump_penalty(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("bump_penalty");
    let e = st.cfg.eta0_cells as isize;
    let ups = st.cfg.upsilon;
    for sl in &st.lemma_slices {
        let n = sl.prefix.cells();
        for c in 0..n as isize {
            let mass = sl.prefix.window((c - e).rem_euclid(n as isize) as usize, 2 * e as usize);
            let k = (mass / ups).floor();
            if k < 1.0 {
                t.skip();
                continue;
            }
            let r = cell_sum(&sl.r, c - e / 2, e as usize);
            t.push(rel(r, k * ups), tol);
        }
    }
    vec![t]
}

/// Pairs of cells `(s0, t0)` with centers in `[lo, hi]` (cell-boundary
/// units), `0 < t0 - s0 <= d0`, and jump `|u(s0) - u(t0)|`.
fn jump_pairs(u: &[f64], lo: isize, hi: isize, d0: isize) -> Vec<(isize, isize, f64)> {
    let mut out = Vec::new();
    for s in lo..hi {
        for t in s + 1..=(s + d0).min(hi - 1) {
            out.push((s, t, (at(u, s) - at(u, t)).abs()));
        }
    }
    out
}

/// Instances with `R(a - eta0/2, a + eta0/2) < 0`: the mass on the wider
/// window is at most `ups`, `R >= -ups`, there is a jump of at least
/// `1 - delta` within `delta0`, and `u` stays within `1/4 + sqrt(2 delta)`
/// of the jump values up to `a +- eta0`.
fn check_negative_r(st: &Setup) -> Vec<Tally> {
    let names = ["negative_r_floor", "negative_r_jump", "negative_r_localized_mass", "negative_r_plateau"];
    let mut tallies: Vec<Tally> = names.iter().map(|_| Tally::new()).collect();
    let tol: Vec<f64> = names.iter().map(|n| st.cfg.tolerance(n)).collect();
    let e = st.cfg.eta0_cells as isize;
    let ups = st.cfg.upsilon;
    let delta = st.cfg.delta;
    let plateau = 0.25 + (2.0 * delta).sqrt();
    for sl in &st.lemma_slices {
        let n = sl.prefix.cells() as isize;
        let hg = sl.prefix.spacing;
        let u = &sl.prefix.values;
        // delta0 / 2 in cells, rounded so the search window includes it
        let d0 = (st.delta0 / hg + 1e-9).floor() as isize;
        let half_d0 = (st.delta0 / (2.0 * hg) + 1e-9).floor() as isize;
        for c in 0..n {
            let r = cell_sum(&sl.r, c - e / 2, e as usize);
            if r >= 0.0 {
                tallies.iter_mut().for_each(Tally::skip);
                continue;
            }
            tallies[0].push(rel(r, -ups), tol[0]);
            let mass = sl.prefix.window((c - e).rem_euclid(n) as usize, 2 * e as usize);
            tallies[2].push(rel(ups, mass), tol[2]);
            let pairs = jump_pairs(u, c - e / 2 - half_d0, c + e / 2 + half_d0, d0.max(1));
            let best = pairs.iter().fold(0.0f64, |m, p| m.max(p.2));
            tallies[1].push(best - (1.0 - delta), tol[1]);
            let mut plateau_margin: Option<f64> = None;
            for &(s0, t0, jump) in &pairs {
                if jump < 1.0 - delta {
                    continue;
                }
                let right = (t0..c + e).map(|x| (at(u, x) - at(u, t0)).abs()).fold(0.0, f64::max);
                let left = (c - e..=s0).map(|x| (at(u, x) - at(u, s0)).abs()).fold(0.0, f64::max);
                let m = (plateau - right).min(plateau - left);
                plateau_margin = Some(plateau_margin.map_or(m, |b: f64| b.max(m)));
            }
            match plateau_margin {
                Some(m) => tallies[3].push(m, tol[3]),
                None => tallies[3].skip(),
            }
        }
    }
    tallies
}

/// Where `R(I) < 0`: `M(I) <= 2 ups max(|I| / eta0, 1)`.
fn check_interval_mass(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("negative_r_interval_mass");
    let e = st.cfg.eta0_cells;
    for sl in &st.lemma_slices {
        let n = sl.prefix.cells();
        for len in [e / 2, e, 2 * e, 4 * e] {
            if len >= n {
                continue;
            }
            for a in 0..=n - len {
                let r = cell_sum(&sl.r, a as isize, len);
                if r >= 0.0 {
                    t.skip();
                    continue;
                }
                let bound = 2.0 * st.cfg.upsilon * (len as f64 / e as f64).max(1.0);
                t.push(rel(bound, sl.prefix.window(a, len)), tol);
            }
        }
    }
    vec![t]
}

/// If every jump within `delta0` near `(a - eta0/2, a + eta0/2)` is at most
/// `1 - delta`, then `R` over that interval is positive.
fn check_small_jumps(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("small_jumps_positive");
    let e = st.cfg.eta0_cells as isize;
    for sl in &st.lemma_slices {
        let n = sl.prefix.cells() as isize;
        let hg = sl.prefix.spacing;
        let d0 = ((st.delta0 / hg + 1e-9).floor() as isize).max(1);
        let half_d0 = (st.delta0 / (2.0 * hg) + 1e-9).floor() as isize;
        for c in 0..n {
            let pairs = jump_pairs(&sl.prefix.values, c - e / 2 - half_d0, c + e / 2 + half_d0, d0);
            if pairs.iter().any(|p| p.2 > 1.0 - st.cfg.delta) {
                t.skip();
                continue;
            }
            t.push_strict(rel(cell_sum(&sl.r, c - e / 2, e as usize), 0.0), tol);
        }
    }
    vec![t]
}

fn check_cross_terms(st: &Setup) -> Vec<Tally> {
    let (mut tv, mut tw) = (Tally::new(), Tally::new());
    let tol_v = st.cfg.tolerance("cross_v_nonnegative");
    let tol_w = st.cfg.tolerance("cross_w_nonnegative");
    for (f, dec) in st.energy2_fields.iter().zip(&st.energy2_decomp) {
        for i in 0..f.field.d() {
            for x in 0..f.field.len() {
                let (_, v, w, _) = dec.cell(i, x);
                tv.push(v / (1.0 + v.abs()), tol_v);
                tw.push(w / (1.0 + w.abs()), tol_w);
            }
        }
    }
    vec![tv, tw]
}

/// `F >= (1/L^d) sum_i int Fbar_i(Q_l(z)) dz` on every field.
fn check_lower_bound(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let base = st.cfg.tolerance("lower_bound_residual");
    let opts = ReportOptions {
        stride: 0,
        threads: 1,
    };
    let mut run = |f: &Field, grid: &Grid| {
        let k = cube_cells(&grid.params, st.cfg.cube_fraction);
        let l = k as f64 * grid.params.spacing();
        match lower_bound_report_with(f, l, &grid.table, &opts) {
            Ok(rep) => {
                let scale = 1.0 + rep.energy.abs() + rep.lower_bound.abs();
                let tol = base.max(rep.budget.tolerance / scale);
                t.push(rep.lower_bound_residual / scale, tol);
            }
            Err(_) => t.skip(),
        }
    };
    for f in &st.energy1_fields {
        run(&f.field, &st.energy1[f.grid]);
    }
    for f in &st.energy2_fields {
        run(&f.field, &st.energy2[f.grid]);
    }
    vec![t]
}

/// On exact stripes orthogonal to `e_0` (plus half-cell ramps), the integral
/// of `{1/4 - [u(x) - u(x + zeta_0 e_0)]}^2` over `x_0 in [s0 - alpha, s0]`,
/// `x_0 + zeta_0 in [t0, t0 + alpha]` and `|zeta_perp| < alpha` is at least
/// `alpha^(d+1) / 8`. The bound is attained in `d = 2` when `u(x) = u(x +
/// zeta_0 e_0)` throughout, so the check is not strict.
fn check_stripe_cross_integral(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("stripe_cross_integral");
    for grid in &st.energy2 {
        let params = &grid.params;
        let n = params.cells() as isize;
        let hg = params.spacing();
        let mut fields = Vec::new();
        for half in [n / 4, n / 2] {
            if let Ok(f) = make_stripe_field(params, 0, half as f64 * hg, 0.0) {
                let mut ramp = f.values().to_vec();
                for x in 0..f.len() {
                    let c = f.coords(x)[0] as isize;
                    if c % half == 0 {
                        ramp[x] = 0.5;
                    }
                }
                fields.push(Field::new(params.clone(), ramp).expect("values in range"));
                fields.push(f);
            }
        }
        for f in &fields {
            let u = |c0: isize, c1: isize| f.values()[(c0.rem_euclid(n) * n + c1.rem_euclid(n)) as usize];
            for alpha in [1isize, 2, 4] {
                let a = alpha as f64 * hg;
                for s0 in 0..n {
                    for t0 in s0 - alpha..=s0 + alpha {
                        for p in 0..n {
                            let mut acc = 0.0;
                            for q in p - alpha..p + alpha {
                                for x in s0 - alpha..s0 {
                                    for y in t0..t0 + alpha {
                                        let e = 0.25 - (u(x, q) - u(y, q));
                                        acc += e * e;
                                    }
                                }
                            }
                            let integral = acc * hg.powi(3);
                            t.push((integral - a.powi(3) / 8.0) / a.powi(3), tol);
                        }
                    }
                }
            }
        }
    }
    vec![t]
}

/// `D_eta = 0` on exact stripes whenever `eta` is at most the half period.
fn check_stripe_distance(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("stripe_distance_exact");
    for grid in st.energy1.iter().chain(&st.energy2) {
        let params = &grid.params;
        let n = params.cells();
        let hg = params.spacing();
        let k = cube_cells(params, st.cfg.cube_fraction);
        let l = k as f64 * hg;
        for axis in 0..params.d() {
            for half in [2, 4, n / 4] {
                let Ok(f) = make_stripe_field(params, axis, half as f64 * hg, 0.0) else {
                    continue;
                };
                for eta_cells in 1..=half {
                    let eta = eta_cells as f64 * hg;
                    for c in (0..n).step_by(1 + n / 16) {
                        let z = vec![c as f64 * hg; params.d()];
                        match direction_distance(&f, (&z, l), eta) {
                            Ok((dist, _)) => t.push(-dist, tol),
                            Err(_) => t.skip(),
                        }
                    }
                }
            }
        }
    }
    vec![t]
}

/// Sum over slices along `e_i` of `R + V` over one period, per unit box
/// volume.
fn slice_balance(field: &Field, i: usize, table: &KernelTable<f64>) -> (f64, f64) {
    let n = field.cells();
    let stride = field.stride(i);
    let mut rv = 0.0;
    let mut v_abs = 0.0;
    for x in 0..field.len() {
        if (x / stride) % n != 0 {
            continue;
        }
        let (_, r, v) = slice_parts(field, i, x, table).expect("valid slice");
        let (rs, vs): (f64, f64) = (r.iter().sum(), v.iter().sum());
        rv += rs + vs;
        v_abs += vs.abs();
    }
    let per = field.params().spacing().powi(field.d() as i32 - 1) / field.params().box_len().powi(field.d() as i32);
    (rv * per, v_abs * per)
}

/// For `u = u(x_0)`, along `e_1`: `R + V >= 0` and `V = 0` over full periods.
fn check_one_dim_balance(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("one_dim_slice_balance");
    for f in st.energy2_fields.iter().filter(|f| f.one_dim) {
        let table = &st.energy2[f.grid].table;
        let (rv, v) = slice_balance(&f.field, 1, table);
        t.push(rel(rv, 0.0).min(-v), tol);
    }
    vec![t]
}

/// Fields close to stripes orthogonal to `e_0` but not one-dimensional:
/// along `e_1`, `R + V` over full periods is strictly positive.
fn check_balance_margin(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("slice_balance_margin");
    let mut per_size = Vec::new();
    for (g, grid) in st.energy2.iter().enumerate() {
        let params = &grid.params;
        let k = cube_cells(params, st.cfg.cube_fraction);
        let l = k as f64 * params.spacing();
        let mut worst = f64::INFINITY;
        for f in st.energy2_fields.iter().filter(|f| f.grid == g && !f.one_dim) {
            let z = vec![params.box_len() / 2.0; 2];
            let close = crate::stripes::stripe_fit_distance(&f.field, 0, (&z, l), params.spacing())
                .map(|fit| fit.distance <= st.cfg.sigma)
                .unwrap_or(false);
            let varies = (0..f.field.len()).any(|x| (f.field.values()[x] - f.field.values()[f.field.shifted(x, 1, 1)]).abs() > 1e-12);
            if !close || !varies {
                t.skip();
                continue;
            }
            let (rv, _) = slice_balance(&f.field, 1, &grid.table);
            let m = rel(rv, 0.0);
            worst = worst.min(m);
            t.push_strict(m, tol);
        }
        if worst.is_finite() {
            per_size.push(worst);
        }
    }
    t.value = per_size.iter().copied().reduce(f64::min);
    t.note = format!("per size {}", fmt_list(&per_size));
    vec![t]
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(" ")
}

/// Whether per-size constants agree within `factor`; values at or below
/// `floor` count as `floor`.
fn stable(values: &[f64], factor: f64) -> bool {
    let floor = 1e-9;
    let clamped: Vec<f64> = values.iter().map(|&v| v.max(floor)).collect();
    let (lo, hi) = clamped.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    clamped.is_empty() || hi <= factor * lo
}

fn monitor(t: &mut Tally, per_size: Vec<f64>, factor: f64) {
    t.instances += 1;
    t.value = per_size.iter().copied().reduce(f64::max);
    let ok = stable(&per_size, factor);
    let (lo, hi) = per_size
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    t.worst = if per_size.is_empty() { f64::INFINITY } else { factor * lo.max(1e-9) - hi.max(1e-9) };
    if !ok {
        t.failures += 1;
    }
    t.note = format!("per size {}", fmt_list(&per_size));
}

/// `C0 = max (C* |I| - R(I))` over intervals `I` inside `[0, L)` of the
/// one-dimensional energy fields, per grid size.
fn check_interval_constant(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let mut per_size = vec![f64::NEG_INFINITY; st.energy1.len()];
    for sl in &st.energy1_slices {
        let grid = &st.energy1[sl.grid];
        let n = sl.r.len();
        let hg = grid.params.spacing();
        let mut prefix = vec![0.0; n + 1];
        for c in 0..n {
            prefix[c + 1] = prefix[c] + sl.r[c];
        }
        for a in 0..n {
            for b in a + 1..=n {
                let v = grid.c_star * (b - a) as f64 * hg - (prefix[b] - prefix[a]);
                per_size[sl.grid] = per_size[sl.grid].max(v);
            }
        }
    }
    monitor(&mut t, per_size, st.cfg.stability_factor);
    vec![t]
}

/// `C1 = max -Fbar(Q) eta0 / (ups nu d)` over cubes where `u` is within
/// `nu l^d` of a constant in `L^1`, per grid size. The energy regime has no
/// scanned `eta0`; `h* / 2` is used.
fn check_near_constant(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let eta0 = st.h_star_1d / 2.0;
    let mut per_size = vec![0.0f64; st.energy1.len()];
    for f in &st.energy1_fields {
        let grid = &st.energy1[f.grid];
        let Ok(dec) = Decomposition::new(&f.field, &grid.table, 1) else {
            continue;
        };
        let n = grid.params.cells();
        let hg = grid.params.spacing();
        let k = cube_cells(&grid.params, st.cfg.cube_fraction);
        let l = k as f64 * hg;
        let u = f.field.values();
        for c in 0..n {
            let ones: f64 = (0..k).map(|j| u[(c + j) % n]).sum::<f64>() * hg;
            if ones.min(l - ones) > st.cfg.nu * l {
                t.skip();
                continue;
            }
            let fbar = dec.cube(&[c], k).total;
            let v = -fbar * eta0 / (st.cfg.upsilon * st.cfg.nu);
            per_size[f.grid] = per_size[f.grid].max(v);
        }
    }
    let skipped = t.skipped;
    monitor(&mut t, per_size, st.cfg.stability_factor);
    t.skipped = skipped;
    vec![t]
}

/// `int_0^L Fbar_i(Q_l(z_perp + s e_i)) ds >= L C*`.
fn check_period_average(st: &Setup) -> Vec<Tally> {
    let mut t = Tally::new();
    let tol = st.cfg.tolerance("period_average");
    let mut run = |f: &Field, grid: &Grid, dec: &Decomposition<f64>| {
        let params = &grid.params;
        let d = params.d();
        let n = params.cells();
        let hg = params.spacing();
        let k = cube_cells(params, st.cfg.cube_fraction);
        for i in 0..d {
            for perp in 0..n.pow(d as u32 - 1) {
                let mut acc = 0.0;
                for s in 0..n {
                    let mut corner = vec![0; d];
                    let mut rem = perp;
                    for ax in (0..d).rev() {
                        if ax == i {
                            corner[ax] = s;
                        } else {
                            corner[ax] = rem % n;
                            rem /= n;
                        }
                    }
                    acc += dec.cube(&corner, k).fbar[i] * hg;
                }
                t.push(rel(acc, params.box_len() * grid.c_star), tol);
            }
        }
        let _ = f;
    };
    for f in &st.energy1_fields {
        let grid = &st.energy1[f.grid];
        if let Ok(dec) = Decomposition::new(&f.field, &grid.table, 1) {
            run(&f.field, grid, &dec);
        }
    }
    for (f, dec) in st.energy2_fields.iter().zip(&st.energy2_decomp) {
        run(&f.field, &st.energy2[f.grid], dec);
    }
    vec![t]
}
