//! Projected gradient descent on the full torus and one-dimensionality
//! diagnostics.
//!
//! Stopping uses the sup norm of the projected `L^2` gradient, i.e. the sample
//! gradient of `F` times `N^d`, so `grad_tol` does not depend on the grid.

use crate::energy::{total_energy, SpectralEnergy};
use crate::error::{param, Error, Result};
use crate::field::clamp01;
use crate::io::{save_field, Format};
use crate::kernel::KernelTable;
use crate::{make_random_field, Params, Real, ScalarField};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// Fixed step length (in `L^2`-gradient units), halved until the energy
    /// does not increase.
    Fixed(f64),
    /// Armijo backtracking starting from twice the last accepted step.
    Backtracking,
    /// Barzilai-Borwein step with Armijo safeguard.
    BarzilaiBorwein,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub grad_tol: f64,
    pub energy_tol: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Correlation length of random restarts; `None` picks `L/16` (at least
    /// two cells).
    pub restart_smoothness: Option<f64>,
    /// Upper bound on concurrently running restarts.
    pub threads: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            step_rule: StepRule::BarzilaiBorwein,
            grad_tol: 1e-7,
            energy_tol: 1e-13,
            seed: 0,
            restarts: 1,
            restart_smoothness: None,
            threads: 1,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(param("max_iters", "need max_iters >= 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(param("grad_tol", format!("need grad_tol > 0, got {}", self.grad_tol)));
        }
        if !(self.energy_tol > 0.0) {
            return Err(param("energy_tol", format!("need energy_tol > 0, got {}", self.energy_tol)));
        }
        if let StepRule::Fixed(s) = self.step_rule {
            if !(s > 0.0) {
                return Err(param("step_rule", format!("fixed step must be positive, got {s}")));
            }
        }
        if self.restarts == 0 {
            return Err(param("restarts", "need at least one restart"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult<T> {
    pub field: ScalarField<T>,
    /// Energy after each accepted step, starting with the initial energy.
    pub energy_trace: Vec<T>,
    pub converged: bool,
    pub best_restart: usize,
    pub iterations: usize,
    pub projected_grad_norm: T,
}

pub(crate) struct SpgOutcome<T> {
    pub x: Vec<T>,
    pub trace: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub pg_norm: T,
}

pub(crate) struct SpgSettings {
    pub rule: StepRule,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub energy_tol: f64,
}

const ARMIJO: f64 = 1e-4;
const PATIENCE: usize = 5;

/// Monotone spectral projected gradient on the box `[0,1]^n`. `f(x, g, move)`
/// writes the gradient and returns the energy; `move` is the largest sample
/// change of the step that produced `x`. `grad_scale` converts the sample
/// gradient to the norm used by the stopping test.
pub(crate) fn spg<T: Real>(
    x0: Vec<T>,
    mut f: impl FnMut(&[T], &mut [T], T) -> T,
    grad_scale: T,
    s: &SpgSettings,
) -> Result<SpgOutcome<T>> {
    let n = x0.len();
    let mut x: Vec<T> = x0.into_iter().map(clamp01).collect();
    let mut g = vec![T::zero(); n];
    let mut e = f(&x, &mut g, T::zero());
    if !e.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(0));
    }
    let mut trace = vec![e];
    let mut xn = vec![T::zero(); n];
    let mut gn = vec![T::zero(); n];
    let pg_norm = |x: &[T], g: &[T]| {
        x.iter()
            .zip(g)
            .fold(T::zero(), |m, (&xi, &gi)| m.max((xi - clamp01(xi - gi * grad_scale)).abs()))
    };
    let gmax = g.iter().fold(T::zero(), |m, v| m.max(v.abs())) * grad_scale;
    let mut step = match s.rule {
        StepRule::Fixed(t) => T::of(t),
        _ => {
            if gmax > T::zero() {
                T::of(0.1) / gmax
            } else {
                T::one()
            }
        }
    };
    let tol = T::of(s.grad_tol);
    let etol = T::of(s.energy_tol);
    let tiny = T::of(1e-30);
    let mut slow = 0;
    let mut converged = false;
    let mut pg = pg_norm(&x, &g);
    let mut iterations = 0;
    for it in 1..=s.max_iters {
        if pg <= tol {
            converged = true;
            break;
        }
        iterations = it;
        let mut t = match s.rule {
            StepRule::Fixed(t0) => T::of(t0),
            _ => step,
        };
        let mut first_dec = None;
        let accepted = loop {
            let mut dec = T::zero();
            let mut moved = T::zero();
            for k in 0..n {
                xn[k] = clamp01(x[k] - t * grad_scale * g[k]);
                dec += g[k] * (xn[k] - x[k]);
                moved = moved.max((xn[k] - x[k]).abs());
            }
            first_dec.get_or_insert(dec);
            if dec >= T::zero() {
                break None;
            }
            let en = f(&xn, &mut gn, moved);
            if !en.is_finite() || gn.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(it));
            }
            if en <= e + T::of(ARMIJO) * dec {
                break Some(en);
            }
            t *= T::of(0.5);
            if t * gmax.max(T::one()) < tiny {
                break None;
            }
        };
        let Some(en) = accepted else {
            // no representable descent left: the predicted decrease of the
            // first trial is within roundoff of the energy itself
            let floor = T::of(1e4) * T::epsilon() * e.abs().max(tiny);
            if first_dec.is_some_and(|d| -d <= floor) {
                converged = true;
            }
            break;
        };
        let (mut sy, mut ss) = (T::zero(), T::zero());
        for k in 0..n {
            let sk = xn[k] - x[k];
            sy += sk * (gn[k] - g[k]) * grad_scale;
            ss += sk * sk;
        }
        step = match s.rule {
            StepRule::BarzilaiBorwein => {
                if sy > T::zero() {
                    (ss / sy).max(T::of(1e-12)).min(T::of(1e12))
                } else {
                    t * T::of(4.0)
                }
            }
            StepRule::Backtracking => t * T::of(2.0),
            StepRule::Fixed(t0) => T::of(t0),
        };
        let rel = (e - en) / e.abs().max(tiny);
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        e = en;
        trace.push(e);
        pg = pg_norm(&x, &g);
        if rel <= etol {
            slow += 1;
            if slow >= PATIENCE {
                converged = true;
                break;
            }
        } else {
            slow = 0;
        }
    }
    if pg <= tol {
        converged = true;
    }
    Ok(SpgOutcome {
        x,
        trace,
        converged,
        iterations,
        pg_norm: pg,
    })
}

/// Projected gradient descent of the total energy from `init`.
pub fn minimize_field<T: Real>(
    params: &Params<T>,
    init: &ScalarField<T>,
    opts: &MinimizeOptions,
    table: &KernelTable<T>,
) -> Result<MinimizeResult<T>> {
    opts.validate()?;
    if init.params() != params {
        return Err(param("init", "initial field was built for different parameters"));
    }
    if table.params() != params {
        return Err(param("table", "kernel table was built for different parameters"));
    }
    let settings = SpgSettings {
        rule: opts.step_rule,
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
        energy_tol: opts.energy_tol,
    };
    let mut energy = SpectralEnergy::new(params, table)?;
    let out = spg(
        init.values().to_vec(),
        |u, g, moved| energy.eval(u, g, moved),
        T::of_usize(params.len()),
        &settings,
    )?;
    Ok(MinimizeResult {
        field: ScalarField::new(params.clone(), out.x)?,
        energy_trace: out.trace,
        converged: out.converged,
        best_restart: 0,
        iterations: out.iterations,
        projected_grad_norm: out.pg_norm,
    })
}

/// Runs `opts.restarts` descents from `make_random_field(seed + k)` and
/// returns all of them, in restart order.
pub fn minimize_restarts<T: Real>(
    params: &Params<T>,
    opts: &MinimizeOptions,
    table: &KernelTable<T>,
) -> Result<Vec<MinimizeResult<T>>> {
    opts.validate()?;
    let hg = params.spacing().f64();
    let sm = opts
        .restart_smoothness
        .unwrap_or_else(|| (params.box_len().f64() / 16.0).max(2.0 * hg));
    let run = |k: usize| -> Result<MinimizeResult<T>> {
        let init = make_random_field(params, opts.seed + k as u64, T::of(sm))?;
        let mut r = minimize_field(params, &init, opts, table)?;
        r.best_restart = k;
        Ok(r)
    };
    let threads = opts.threads.max(1);
    let mut slots: Vec<Option<Result<MinimizeResult<T>>>> = (0..opts.restarts).map(|_| None).collect();
    if threads == 1 {
        for (k, s) in slots.iter_mut().enumerate() {
            *s = Some(run(k));
        }
    } else {
        for chunk in slots.chunks_mut(threads).enumerate() {
            let (c, part) = chunk;
            std::thread::scope(|sc| {
                for (j, s) in part.iter_mut().enumerate() {
                    let run = &run;
                    sc.spawn(move || *s = Some(run(c * threads + j)));
                }
            });
        }
    }
    slots.into_iter().map(|s| s.unwrap()).collect()
}

/// Lowest final energy among restarts (earliest restart on ties).
pub fn best_of<T: Real>(results: &[MinimizeResult<T>]) -> Option<&MinimizeResult<T>> {
    results.iter().fold(None, |best: Option<&MinimizeResult<T>>, r| match best {
        Some(b) if b.energy_trace.last() <= r.energy_trace.last() => Some(b),
        _ => Some(r),
    })
}

/// Warning text when `L` is not an even multiple of `h_star`.
pub fn period_warning<T: Real>(params: &Params<T>, h_star: T) -> Option<String> {
    let periods = params.box_len().f64() / (2.0 * h_star.f64());
    if (periods - periods.round()).abs() > 1e-6 || periods.round() < 1.0 {
        Some(format!(
            "L = {} is not a multiple of 2h* = {}; minimizers cannot be exact optimal stripes",
            params.box_len(),
            2.0 * h_star.f64()
        ))
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneDimensionalityReport<T> {
    pub is_1d: bool,
    /// Axis of smallest deviation when `is_1d`.
    pub direction: Option<usize>,
    /// Per axis `i`: mean over `x_i` of the variance of `u` over the
    /// hyperplane `{x_i = const}`.
    pub deviation: Vec<T>,
}

pub fn one_dimensionality_report<T: Real>(field: &ScalarField<T>, tol: T) -> OneDimensionalityReport<T> {
    let d = field.d();
    let n = field.cells();
    let u = field.values();
    let per_plane = T::of_usize(u.len() / n);
    let mut deviation = Vec::with_capacity(d);
    for axis in 0..d {
        let s = field.stride(axis);
        // shifted sums: exact zero for constant planes
        let mut first = vec![None; n];
        let mut sum = vec![T::zero(); n];
        let mut sq = vec![T::zero(); n];
        for (k, &v) in u.iter().enumerate() {
            let c = (k / s) % n;
            let r = *first[c].get_or_insert(v);
            sum[c] += v - r;
            sq[c] += (v - r) * (v - r);
        }
        for c in 0..n {
            let m = sum[c] / per_plane;
            sq[c] = (sq[c] / per_plane - m * m).max(T::zero());
        }
        let mean_var = sq.iter().fold(T::zero(), |a, &v| a + v) / T::of_usize(n);
        deviation.push(mean_var);
    }
    let mut best = 0;
    for (i, &v) in deviation.iter().enumerate() {
        if v < deviation[best] {
            best = i;
        }
    }
    let is_1d = deviation[best] < tol;
    OneDimensionalityReport {
        is_1d,
        direction: is_1d.then_some(best),
        deviation,
    }
}

/// Writes `restart_<k>_trace.csv` and `restart_<k>_field.bin` into `dir`.
pub fn write_restart_outputs<T: Real>(dir: &Path, k: usize, result: &MinimizeResult<T>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let trace = dir.join(format!("restart_{k}_trace.csv"));
    let mut s = String::from("iteration,energy_per_volume\n");
    for (i, e) in result.energy_trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{:.17e}", e.f64());
    }
    std::fs::write(&trace, s)?;
    let field = dir.join(format!("restart_{k}_field.bin"));
    save_field(&result.field, &field, Format::Binary)?;
    Ok(vec![trace, field])
}

/// Total energy of a finished run, recomputed from scratch.
pub fn final_energy<T: Real>(result: &MinimizeResult<T>, table: &KernelTable<T>) -> T {
    total_energy(&result.field, table).total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::make_stripe_field;

    fn small() -> (Params<f64>, KernelTable<f64>) {
        let p = Params::new(2, 4.0, 0.5, 0.1, 1.6, 10.0).unwrap();
        let t = KernelTable::new(&p).unwrap();
        (p, t)
    }

    #[test]
    fn descent_is_monotone_and_projected() {
        let (p, t) = small();
        let init = make_random_field(&p, 4, 0.3).unwrap();
        let opts = MinimizeOptions {
            max_iters: 200,
            ..Default::default()
        };
        let r = minimize_field(&p, &init, &opts, &t).unwrap();
        assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.field.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(r.energy_trace.last().unwrap() < &r.energy_trace[0]);
        let e = final_energy(&r, &t);
        assert!((e - r.energy_trace.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_traces() {
        let (p, t) = small();
        let opts = MinimizeOptions {
            max_iters: 60,
            restarts: 2,
            seed: 7,
            ..Default::default()
        };
        let a = minimize_restarts(&p, &opts, &t).unwrap();
        let b = minimize_restarts(&p, &opts, &t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.energy_trace, y.energy_trace);
        }
        let threaded = minimize_restarts(&p, &MinimizeOptions { threads: 2, ..opts }, &t).unwrap();
        assert_eq!(threaded[1].energy_trace, a[1].energy_trace);
        assert_eq!(threaded[1].best_restart, 1);
    }

    #[test]
    fn step_rules_all_descend() {
        let (p, t) = small();
        let init = make_random_field(&p, 2, 0.3).unwrap();
        for rule in [StepRule::Fixed(0.5), StepRule::Backtracking, StepRule::BarzilaiBorwein] {
            let opts = MinimizeOptions {
                max_iters: 40,
                step_rule: rule,
                ..Default::default()
            };
            let r = minimize_field(&p, &init, &opts, &t).unwrap();
            assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]), "{rule:?}");
            assert!(r.energy_trace.len() > 1, "{rule:?}");
        }
    }

    #[test]
    fn options_are_validated() {
        let (p, t) = small();
        let init = make_random_field(&p, 2, 0.3).unwrap();
        let bad = MinimizeOptions {
            grad_tol: 0.0,
            ..Default::default()
        };
        let e = minimize_field(&p, &init, &bad, &t).unwrap_err();
        assert!(e.to_string().contains("grad_tol"));
    }

    #[test]
    fn one_dimensionality_examples() {
        let (p, _) = small();
        let s = make_stripe_field(&p, 0, 0.4, 0.0).unwrap();
        let r = one_dimensionality_report(&s, 0.01);
        assert!(r.is_1d);
        assert_eq!(r.direction, Some(0));
        assert_eq!(r.deviation[0], 0.0);
        let c = ScalarField::constant(p.clone(), 0.3).unwrap();
        let r = one_dimensionality_report(&c, 0.01);
        assert_eq!(r.direction, Some(0));
        assert!(r.deviation.iter().all(|&v| v == 0.0));
        let wavy = ScalarField::from_fn(p.clone(), |x| {
            let base = if (x[0] / 0.4).floor() as i64 % 2 == 0 { 0.8 } else { 0.2 };
            base + 0.2 * (2.0 * std::f64::consts::PI * x[1] / 1.6).sin()
        });
        assert!(!one_dimensionality_report(&wavy, 0.01).is_1d);
    }

    #[test]
    fn period_warning_only_when_incommensurate() {
        let (p, _) = small();
        assert!(period_warning(&p, 0.4).is_none());
        assert!(period_warning(&p, 0.5).is_some());
    }
}
