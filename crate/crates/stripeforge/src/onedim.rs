//! Optimal one-dimensional periodic profiles.
//!
//! A profile is stored on the `Nh` cells of `[0,h)` and extended to period
//! `2h` by `u(h + t) = 1 - u(h - t)`, so the reflection symmetry holds by
//! construction. Its energy is the energy per unit volume of the stripe field
//! it induces in dimension `d`: the nonlocal part uses the first marginal of
//! the lattice kernel, periodized over `2h` and evaluated by FFT.

use crate::energy::{segment_well, segment_well_da};
use crate::error::{param, Error, Result};
use crate::kernel::{kernel_moments, LatticeMarginal};
use crate::minimize::{spg, SpgSettings, StepRule};
use crate::{Params, Real, ScalarField};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct Profile1D<T> {
    /// Half period.
    pub h: T,
    /// Cell-center samples on `[0,h)` at spacing `1/n_per_unit`.
    pub samples: Vec<T>,
    pub energy_density: T,
    /// `max |u(h+t) + u(h-t) - 1|` over the extended grid.
    pub symmetry_residual: T,
    pub energy_trace: Vec<T>,
    pub converged: bool,
}

impl<T: Real> Profile1D<T> {
    /// Samples over one full period `[0, 2h)`.
    pub fn full_period(&self) -> Vec<T> {
        extend(&self.samples)
    }

    /// Stripe field on the torus of `params` with this profile along `axis`;
    /// `L` must be a multiple of `2h` on the same grid.
    pub fn to_field(&self, params: &Params<T>, axis: usize) -> Result<ScalarField<T>> {
        let per = 2 * self.samples.len();
        let n = params.cells();
        if axis >= params.d() {
            return Err(param("direction", format!("axis {axis} out of range for d={}", params.d())));
        }
        let hg = params.spacing().f64();
        let h_cells = self.h.f64() / hg;
        if n % per != 0 || (h_cells - self.samples.len() as f64).abs() > 1e-6 {
            return Err(param(
                "L",
                format!(
                    "L = {} is not a multiple of 2h = {} on this grid",
                    params.box_len(),
                    2.0 * self.h.f64()
                ),
            ));
        }
        let full = self.full_period();
        let field = ScalarField::constant(params.clone(), T::zero())?;
        let stride = field.stride(axis);
        let values = (0..params.len()).map(|k| full[((k / stride) % n) % per]).collect();
        ScalarField::new(params.clone(), values)
    }
}

fn extend<T: Real>(g: &[T]) -> Vec<T> {
    let mut u = g.to_vec();
    u.extend(g.iter().rev().map(|&v| T::one() - v));
    u
}

fn symmetry_residual<T: Real>(u: &[T]) -> T {
    let nh = u.len() / 2;
    (0..nh).fold(T::zero(), |m, j| m.max((u[nh + j] + u[nh - 1 - j] - T::one()).abs()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneDimResult<T> {
    pub h_star: T,
    pub c_star: T,
    pub profile: Profile1D<T>,
    /// `(h, best energy at h)`, sorted by `h`.
    pub search_trace: Vec<(T, T)>,
    /// Cells per unit length used.
    pub grid_level: T,
    /// False when the lowest energy sits at an end of the bracket.
    pub interior: bool,
}

impl<T: Real> OneDimResult<T> {
    pub fn search_trace_csv(&self) -> String {
        search_trace_csv(&self.search_trace)
    }
}

/// CSV with header `h,energy` (half period in rescaled length units, energy
/// per unit volume).
pub fn search_trace_csv<T: Real>(trace: &[(T, T)]) -> String {
    let mut s = String::from("h,energy\n");
    for (h, e) in trace {
        let _ = writeln!(s, "{:.17e},{:.17e}", h.f64(), e.f64());
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProfileInit {
    /// `1/2 + 1/2 tanh(dist(t, {0,h}) / alpha)`.
    Tanh,
    /// Sharp step: all ones on `[0,h)`.
    Step,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub energy_tol: f64,
    /// Coarse sweep points over `[h_min, h_max]`.
    pub coarse_points: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            grad_tol: 1e-10,
            energy_tol: 1e-15,
            coarse_points: 16,
        }
    }
}

/// Reusable 1D solver for one parameter set (kernel data is cached).
pub struct OneDimSolver<T: Real> {
    params: Params<T>,
    hg: f64,
    c_tau: f64,
    lattice: LatticeMarginal,
    opts: SolverOptions,
    plans: BTreeMap<usize, Plan<T>>,
}

struct Plan<T: Real> {
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    kernel_hat: Vec<Complex<T>>,
    weight_sum: T,
}

impl<T: Real> OneDimSolver<T> {
    pub fn new(params: &Params<T>, opts: SolverOptions) -> Result<Self> {
        if opts.max_iters == 0 || !(opts.grad_tol > 0.0) || !(opts.energy_tol > 0.0) {
            return Err(param("solver", "need max_iters >= 1 and positive tolerances"));
        }
        let hg = params.n_per_unit().f64().recip();
        // a one-cell box carries the exact spacing 1/n_per_unit
        let cell = params.with_box_len(T::of(hg))?;
        let (c_tau, _) = kernel_moments(params)?;
        Ok(Self {
            params: params.clone(),
            hg,
            c_tau: c_tau.f64(),
            lattice: LatticeMarginal::new(&cell),
            opts,
            plans: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn spacing(&self) -> f64 {
        self.hg
    }

    /// Half-period cell count for `h`, rejecting off-grid values.
    pub fn cells_for(&self, h: T) -> Result<usize> {
        let c = h.f64() / self.hg;
        let r = c.round();
        if r < 1.0 || (c - r).abs() > 1e-6 * r.max(1.0) {
            return Err(param(
                "h",
                format!("h = {h} is not a positive multiple of the spacing {}", self.hg),
            ));
        }
        Ok(r as usize)
    }

    fn plan(&mut self, period: usize) -> &Plan<T> {
        let lattice = &self.lattice;
        self.plans.entry(period).or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(period);
            let inv = planner.plan_fft_inverse(period);
            let (mut w, _) = lattice.periodized(period);
            w[0] = 0.0;
            let weight_sum = T::of(w.iter().sum());
            let mut kernel_hat: Vec<Complex<T>> = w.iter().map(|&v| Complex::new(T::of(v), T::zero())).collect();
            fwd.process(&mut kernel_hat);
            Plan {
                fwd,
                inv,
                kernel_hat,
                weight_sum,
            }
        })
    }

    /// Energy per unit volume of the stripe field with half-profile `g`,
    /// with its gradient with respect to `g`.
    pub fn energy_and_gradient(&mut self, g: &[T], grad: &mut [T]) -> T {
        let nh = g.len();
        let per = 2 * nh;
        let hg = T::of(self.hg);
        let alpha = self.params.alpha();
        let cw = T::of(self.c_tau - 1.0);
        let three = T::of(3.0);
        let u = extend(g);
        let plan = self.plan(per);
        let mut buf: Vec<Complex<T>> = u.iter().map(|&v| Complex::new(v, T::zero())).collect();
        plan.fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&plan.kernel_hat) {
            *b = *b * *k;
        }
        plan.inv.process(&mut buf);
        let inv_n = T::of_usize(per).recip();
        let s = plan.weight_sum;

        let mut mm = T::zero();
        let mut nl = T::zero();
        let mut gu = vec![T::zero(); per];
        for k in 0..per {
            let kn = if k + 1 == per { 0 } else { k + 1 };
            let (a, b) = (u[k], u[kn]);
            let dlt = b - a;
            mm += three * alpha * dlt * dlt / hg + three / alpha * hg * segment_well(a, b);
            let dgrad = T::of(6.0) * alpha * dlt / hg;
            gu[k] += cw * (-dgrad + three / alpha * hg * segment_well_da(a, b));
            gu[kn] += cw * (dgrad + three / alpha * hg * segment_well_da(b, a));
            let conv = buf[k].re * inv_n;
            nl += u[k] * (s * u[k] - conv);
            gu[k] -= T::of(4.0) * hg * hg * (s * u[k] - conv);
        }
        nl = T::of(2.0) * hg * hg * nl;
        let vol = T::of_usize(per) * hg;
        for j in 0..nh {
            grad[j] = (gu[j] - gu[per - 1 - j]) / vol;
        }
        (cw * mm - nl) / vol
    }

    pub fn energy(&mut self, g: &[T]) -> T {
        let mut grad = vec![T::zero(); g.len()];
        self.energy_and_gradient(g, &mut grad)
    }

    pub fn initial_profile(&self, h: T, init: ProfileInit) -> Result<Vec<T>> {
        let nh = self.cells_for(h)?;
        let alpha = self.params.alpha().f64();
        let hf = nh as f64 * self.hg;
        Ok((0..nh)
            .map(|k| match init {
                ProfileInit::Step => T::one(),
                ProfileInit::Tanh => {
                    let t = (k as f64 + 0.5) * self.hg;
                    T::of(0.5 + 0.5 * (t.min(hf - t) / alpha).tanh())
                }
            })
            .collect())
    }

    /// Minimizes over half-profiles starting from `g0`.
    pub fn solve_from(&mut self, h: T, g0: Vec<T>) -> Result<Profile1D<T>> {
        let nh = self.cells_for(h)?;
        if g0.len() != nh {
            return Err(param("init", format!("initial profile has {} cells, h needs {nh}", g0.len())));
        }
        let settings = SpgSettings {
            rule: StepRule::BarzilaiBorwein,
            max_iters: self.opts.max_iters,
            grad_tol: self.opts.grad_tol,
            energy_tol: self.opts.energy_tol,
        };
        let scale = T::of_usize(nh);
        let out = spg(g0, |g, gr, _| self.energy_and_gradient(g, gr), scale, &settings)?;
        let u = extend(&out.x);
        Ok(Profile1D {
            h: T::of_usize(nh) * T::of(self.hg),
            symmetry_residual: symmetry_residual(&u),
            energy_density: *out.trace.last().unwrap(),
            samples: out.x,
            energy_trace: out.trace,
            converged: out.converged,
        })
    }

    pub fn solve(&mut self, h: T, init: ProfileInit) -> Result<Profile1D<T>> {
        let g0 = self.initial_profile(h, init)?;
        self.solve_from(h, g0)
    }

    /// Coarse sweep of `[h_min, h_max]` followed by golden-section refinement
    /// over whole cells. Each `h` starts from the tanh profile and, when a
    /// neighbor was already solved, also from its rescaled optimum; the lower
    /// energy is kept.
    pub fn search(&mut self, h_min: T, h_max: T) -> Result<OneDimResult<T>> {
        let r = self.sweep(h_min, h_max)?;
        if !r.interior {
            return Err(Error::BracketEdge {
                h: r.h_star.f64(),
                h_min: h_min.f64(),
                h_max: h_max.f64(),
            });
        }
        Ok(r)
    }

    /// As [`search`](Self::search), but a minimum at the bracket edge is
    /// returned with `interior == false` instead of an error.
    pub fn sweep(&mut self, h_min: T, h_max: T) -> Result<OneDimResult<T>> {
        if !(h_min > T::zero() && h_min < h_max) {
            return Err(param("h_min", format!("need 0 < h_min < h_max, got [{h_min}, {h_max}]")));
        }
        let lo = (h_min.f64() / self.hg).ceil().max(1.0) as usize;
        let hi = (h_max.f64() / self.hg).floor() as usize;
        if hi <= lo + 1 {
            return Err(param("h_max", "bracket holds fewer than three grid half-periods"));
        }
        let pts = self.opts.coarse_points.max(3).min(hi - lo + 1);
        let mut coarse: Vec<usize> = (0..pts)
            .map(|k| lo + ((hi - lo) as f64 * k as f64 / (pts - 1) as f64).round() as usize)
            .collect();
        coarse.dedup();
        let mut memo: BTreeMap<usize, Profile1D<T>> = BTreeMap::new();
        for &c in &coarse {
            self.evaluate(c, &mut memo)?;
        }
        let energy = |memo: &BTreeMap<usize, Profile1D<T>>, c: usize| memo[&c].energy_density;
        let best = *coarse
            .iter()
            .min_by(|&&a, &&b| energy(&memo, a).partial_cmp(&energy(&memo, b)).unwrap())
            .unwrap();
        let pos = coarse.iter().position(|&c| c == best).unwrap();
        let (mut a, mut b) = (coarse[pos.saturating_sub(1)], coarse[(pos + 1).min(coarse.len() - 1)]);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        while b - a > 3 {
            let x1 = b - ((b - a) as f64 * phi).round() as usize;
            let x2 = a + ((b - a) as f64 * phi).round() as usize;
            let (x1, x2) = if x1 < x2 { (x1, x2) } else { (x1.min(b - 1), (x1 + 1).min(b - 1)) };
            self.evaluate(x1, &mut memo)?;
            self.evaluate(x2, &mut memo)?;
            if energy(&memo, x1) <= energy(&memo, x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        for c in a..=b {
            self.evaluate(c, &mut memo)?;
        }
        let (&best, prof) = memo
            .iter()
            .min_by(|x, y| x.1.energy_density.partial_cmp(&y.1.energy_density).unwrap())
            .unwrap();
        let interior = best > coarse[0] && best < *coarse.last().unwrap();
        let hg = T::of(self.hg);
        Ok(OneDimResult {
            h_star: T::of_usize(best) * hg,
            c_star: prof.energy_density,
            profile: prof.clone(),
            search_trace: memo
                .iter()
                .map(|(&c, p)| (T::of_usize(c) * hg, p.energy_density))
                .collect(),
            grid_level: self.params.n_per_unit(),
            interior,
        })
    }

    fn evaluate(&mut self, c: usize, memo: &mut BTreeMap<usize, Profile1D<T>>) -> Result<()> {
        if memo.contains_key(&c) {
            return Ok(());
        }
        let h = T::of_usize(c) * T::of(self.hg);
        let mut best = self.solve(h, ProfileInit::Tanh)?;
        let near = memo
            .range(..c)
            .next_back()
            .map(|(&k, _)| k)
            .into_iter()
            .chain(memo.range(c + 1..).next().map(|(&k, _)| k))
            .min_by_key(|&k| k.abs_diff(c));
        if let Some(k) = near {
            let warm = resample(&memo[&k].samples, c);
            let p = self.solve_from(h, warm)?;
            if p.energy_density < best.energy_density {
                best = p;
            }
        }
        memo.insert(c, best);
        Ok(())
    }
}

/// Linear resampling of cell-centered samples to `m` cells.
fn resample<T: Real>(g: &[T], m: usize) -> Vec<T> {
    let n = g.len();
    (0..m)
        .map(|j| {
            let x = (j as f64 + 0.5) * n as f64 / m as f64 - 0.5;
            let x = x.clamp(0.0, (n - 1) as f64);
            let k = (x.floor() as usize).min(n - 1);
            let f = x - k as f64;
            let b = g[(k + 1).min(n - 1)];
            g[k] + T::of(f) * (b - g[k])
        })
        .collect()
}

/// Optimal profile at half period `h`, descending from the tanh initializer.
pub fn optimal_profile_for_period<T: Real>(params: &Params<T>, h: T) -> Result<Profile1D<T>> {
    OneDimSolver::new(params, SolverOptions::default())?.solve(h, ProfileInit::Tanh)
}

/// Optimal half period and energy density over `[h_min, h_max]`.
pub fn optimal_period_search<T: Real>(params: &Params<T>, h_min: T, h_max: T) -> Result<OneDimResult<T>> {
    OneDimSolver::new(params, SolverOptions::default())?.search(h_min, h_max)
}
