//! Discrete energy on the torus.
//!
//! Gradients are forward differences with periodic wrap. The double well is
//! averaged along each forward edge, `Wbar(a,b) = (1/(b-a)) int_a^b W`, and a
//! cell carries `sum_i theta_i Wbar(u_x, u_{x+e_i})` with
//! `theta_i = |D_i u| / |grad u|_1` (plain `W(u_x)` on flat cells). With this
//! choice the per-edge Modica-Mortola density dominates `|omega(b) - omega(a)|`
//! exactly, so the slice inequalities of module `decompose` hold on the grid
//! without discretization slack.

use crate::error::{Error, Result};
use crate::kernel::KernelTable;
use crate::real::pairwise_sum;
use crate::{make_stripe_field, Params, Real, ScalarField};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyBreakdown<T> {
    /// `M_alpha(u, [0,L)^d)`.
    pub modica_mortola: T,
    /// `(C_tau - 1) M_alpha / L^d`.
    pub mm_term: T,
    /// Nonlocal double sum divided by `L^d`.
    pub nonlocal_term: T,
    pub total: T,
    pub truncation_error_bound: T,
}

#[inline]
pub fn double_well<T: Real>(t: T) -> T {
    let s = t * (T::one() - t);
    s * s
}

#[inline]
pub fn double_well_derivative<T: Real>(t: T) -> T {
    T::of(2.0) * t * (T::one() - t) * (T::one() - T::of(2.0) * t)
}

/// Mean of `W` along the segment from `a` to `b`.
#[inline]
pub fn segment_well<T: Real>(a: T, b: T) -> T {
    let (a2, b2) = (a * a, b * b);
    let h2 = a2 + a * b + b2;
    let h3 = a2 * a + a2 * b + a * b2 + b2 * b;
    let h4 = a2 * a2 + a2 * a * b + a2 * b2 + a * b2 * b + b2 * b2;
    h2 / T::of(3.0) - h3 / T::of(2.0) + h4 / T::of(5.0)
}

/// Partial derivative of [`segment_well`] in its first argument.
#[inline]
pub(crate) fn segment_well_da<T: Real>(a: T, b: T) -> T {
    let (a2, b2) = (a * a, b * b);
    let d2 = T::of(2.0) * a + b;
    let d3 = T::of(3.0) * a2 + T::of(2.0) * a * b + b2;
    let d4 = T::of(4.0) * a2 * a + T::of(3.0) * a2 * b + T::of(2.0) * a * b2 + b2 * b;
    d2 / T::of(3.0) - d3 / T::of(2.0) + d4 / T::of(5.0)
}

#[inline]
fn sgn<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `M_alpha(u) = 3 alpha int |grad u|_1^2 + (3/alpha) int W(u)`.
pub fn modica_mortola<T: Real>(field: &ScalarField<T>, alpha: T) -> T {
    let mut grad = vec![T::zero(); field.len()];
    mm_value_and_gradient(field.params(), field.values(), alpha, &mut grad, false, T::zero(), &mut Vec::new())
}

/// A kink `c |u(y) - u(x)|` of the energy at a point where `u(y) = u(x)`
/// up to the tie tolerance.
struct Kink<T> {
    x: usize,
    y: usize,
    c: T,
}

/// `kinks` receives every edge with a vanishing difference in a cell of
/// nonzero gradient (`d >= 2`); the gradient there takes `sgn(0) = 0`.
/// Differences up to `tie` count as vanishing: a step of that size crosses
/// them, so the one-sided slope says nothing about it.
fn mm_value_and_gradient<T: Real>(
    params: &Params<T>,
    u: &[T],
    alpha: T,
    grad: &mut [T],
    want_grad: bool,
    tie: T,
    kinks: &mut Vec<Kink<T>>,
) -> T {
    let d = params.d();
    let n = params.cells();
    let hg = params.spacing();
    let vol = hg.powi(d as i32);
    let three = T::of(3.0);
    let strides: Vec<usize> = (0..d).map(|k| n.pow((d - 1 - k) as u32)).collect();
    let mut dens = vec![T::zero(); u.len()];
    let mut nbi = vec![0usize; d];
    let mut delta = vec![T::zero(); d];
    let mut wbar = vec![T::zero(); d];
    let hg2 = hg * hg;
    for x in 0..u.len() {
        let mut s = T::zero();
        for i in 0..d {
            let st = strides[i];
            let c = (x / st) % n;
            nbi[i] = if c + 1 == n { x + st - n * st } else { x + st };
            delta[i] = u[nbi[i]] - u[x];
            wbar[i] = segment_well(u[x], u[nbi[i]]);
            s += delta[i].abs();
        }
        let smooth = d == 1 || s > T::zero();
        let w = if d == 1 {
            wbar[0]
        } else if s > T::zero() {
            (0..d).fold(T::zero(), |acc, i| acc + delta[i].abs() / s * wbar[i])
        } else {
            double_well(u[x])
        };
        dens[x] = (three * alpha * s * s / hg2 + three / alpha * w) * vol;
        if !want_grad {
            continue;
        }
        if smooth {
            let mut g0 = T::zero();
            for i in 0..d {
                let theta = if d == 1 { T::one() } else { delta[i].abs() / s };
                let sg = sgn(delta[i]);
                let mut slope = T::of(6.0) * alpha * s / hg2;
                if d > 1 {
                    slope += three / alpha * (wbar[i] - w) / s;
                    if delta[i].abs() <= tie {
                        kinks.push(Kink {
                            x,
                            y: nbi[i],
                            c: slope * vol,
                        });
                    }
                }
                let gd = if d > 1 && delta[i].abs() <= tie { T::zero() } else { slope * sg };
                let da = three / alpha * theta * segment_well_da(u[x], u[nbi[i]]);
                let db = three / alpha * theta * segment_well_da(u[nbi[i]], u[x]);
                grad[nbi[i]] += (gd + db) * vol;
                g0 += (-gd + da) * vol;
            }
            grad[x] += g0;
        } else {
            grad[x] += three / alpha * double_well_derivative(u[x]) * vol;
        }
    }
    pairwise_sum(&dens)
}

/// Calls `f(x_start, y_start, len)` for contiguous runs covering the map
/// `x -> x + m` on the torus, where `m` has coordinates `mc`.
#[inline]
fn for_each_run(n: usize, d: usize, mc: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let last = mc[d - 1];
    let outer = n.pow(d as u32 - 1);
    for o in 0..outer {
        let mut rem = o;
        let mut yo = 0;
        let mut mul = 1;
        for k in (0..d - 1).rev() {
            let c = rem % n;
            rem /= n;
            yo += ((c + mc[k]) % n) * mul;
            mul *= n;
        }
        let xs = o * n;
        let ys = yo * n;
        if last < n {
            f(xs, ys + last, n - last);
        }
        if last > 0 {
            f(xs + n - last, ys, last);
        }
    }
}

fn offset_coords(idx: usize, n: usize, d: usize, out: &mut [usize]) {
    let mut rem = idx;
    for k in (0..d).rev() {
        out[k] = rem % n;
        rem /= n;
    }
}

fn nonlocal_value_and_gradient<T: Real>(
    params: &Params<T>,
    table: &KernelTable<T>,
    u: &[T],
    grad: &mut [T],
    want_grad: bool,
) -> T {
    let d = params.d();
    let n = params.cells();
    let hg = params.spacing();
    let w2 = hg.powi(2 * d as i32);
    let weights = table.periodized();
    let mut per_offset = vec![T::zero(); u.len()];
    let mut mc = vec![0usize; d];
    let four = T::of(4.0);
    for (m, out) in per_offset.iter_mut().enumerate().skip(1) {
        let k = weights[m];
        offset_coords(m, n, d, &mut mc);
        let mut acc = T::zero();
        let kg = four * w2 * k;
        for_each_run(n, d, &mc, |xs, ys, len| {
            let ux = &u[xs..xs + len];
            let uy = &u[ys..ys + len];
            let mut part = T::zero();
            if want_grad {
                let gx = &mut grad[xs..xs + len];
                for j in 0..len {
                    let diff = ux[j] - uy[j];
                    part += diff * diff;
                    gx[j] += kg * diff;
                }
            } else {
                for j in 0..len {
                    let diff = ux[j] - uy[j];
                    part += diff * diff;
                }
            }
            acc += part;
        });
        *out = k * acc * w2;
    }
    pairwise_sum(&per_offset)
}

/// Nonlocal double sum `sum_x sum_z hg^(2d) K(z) (u(x) - u(x+z))^2` over all
/// lattice offsets (torus images included), with the bound on the far-field
/// approximation.
pub fn nonlocal_energy<T: Real>(field: &ScalarField<T>, table: &KernelTable<T>) -> (T, T) {
    let mut grad = vec![T::zero(); 0];
    let v = nonlocal_value_and_gradient(field.params(), table, field.values(), &mut grad, false);
    let bound = table.truncation_bound() * field.params().box_len().powi(field.d() as i32);
    (v, bound)
}

pub fn total_energy<T: Real>(field: &ScalarField<T>, table: &KernelTable<T>) -> EnergyBreakdown<T> {
    let params = field.params();
    let vol = params.box_len().powi(params.d() as i32);
    let mm = modica_mortola(field, params.alpha());
    let (nl, _) = nonlocal_energy(field, table);
    let mm_term = (table.c_tau() - T::one()) * mm / vol;
    let nonlocal_term = nl / vol;
    EnergyBreakdown {
        modica_mortola: mm,
        mm_term,
        nonlocal_term,
        total: mm_term - nonlocal_term,
        truncation_error_bound: table.truncation_bound(),
    }
}

/// Energy and its exact gradient for raw samples on the grid of `params`.
pub fn energy_and_gradient<T: Real>(
    params: &Params<T>,
    table: &KernelTable<T>,
    u: &[T],
    grad: &mut [T],
) -> T {
    let tie = T::epsilon().sqrt();
    assemble(params, table, u, grad, tie, |g| nonlocal_value_and_gradient(params, table, u, g, true))
}

/// `(C_tau - 1) M - NL` per volume, with `nonlocal` writing the nonlocal
/// gradient into a zeroed buffer and returning its value.
fn assemble<T: Real>(
    params: &Params<T>,
    table: &KernelTable<T>,
    u: &[T],
    grad: &mut [T],
    tie: T,
    nonlocal: impl FnOnce(&mut [T]) -> T,
) -> T {
    let vol = params.box_len().powi(params.d() as i32);
    let cw = table.c_tau() - T::one();
    grad.iter_mut().for_each(|g| *g = T::zero());
    let mut gm = vec![T::zero(); u.len()];
    let mut kinks = Vec::new();
    let mm = mm_value_and_gradient(params, u, params.alpha(), &mut gm, true, tie, &mut kinks);
    let nl = nonlocal(grad);
    for (g, m) in grad.iter_mut().zip(&gm) {
        *g = (cw * *m - *g) / vol;
    }
    for k in &mut kinks {
        k.c = cw * k.c / vol;
    }
    kinks.retain(|k| k.c > T::zero());
    min_norm_subgradient(grad, &kinks);
    cw * mm / vol - nl / vol
}

/// [`energy_and_gradient`] with the nonlocal sum evaluated as a circular
/// convolution by FFT, `O(N^d log N)` per call. Agrees with the direct sum to
/// rounding, but not bit for bit, so exact symmetry checks must use
/// [`total_energy`].
pub struct SpectralEnergy<'a, T: Real> {
    params: &'a Params<T>,
    table: &'a KernelTable<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    kernel_hat: Vec<Complex<T>>,
    weight_sum: T,
    buf: Vec<Complex<T>>,
    line: Vec<Complex<T>>,
}

impl<'a, T: Real> SpectralEnergy<'a, T> {
    pub fn new(params: &'a Params<T>, table: &'a KernelTable<T>) -> Result<Self> {
        if table.params() != params {
            return Err(crate::error::param("table", "kernel table was built for different parameters"));
        }
        let n = params.cells();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut w = table.periodized().to_vec();
        w[0] = T::zero();
        let weight_sum = pairwise_sum(&w);
        let mut me = Self {
            params,
            table,
            fwd,
            inv,
            kernel_hat: w.iter().map(|&v| Complex::new(v, T::zero())).collect(),
            weight_sum,
            buf: vec![Complex::new(T::zero(), T::zero()); w.len()],
            line: vec![Complex::new(T::zero(), T::zero()); n],
        };
        let mut k = std::mem::take(&mut me.kernel_hat);
        me.transform(&mut k, true);
        me.kernel_hat = k;
        Ok(me)
    }

    /// Separable transform over every axis of the torus.
    fn transform(&mut self, data: &mut [Complex<T>], forward: bool) {
        let n = self.params.cells();
        let d = self.params.d();
        let fft = if forward { &self.fwd } else { &self.inv };
        for axis in 0..d {
            let st = n.pow((d - 1 - axis) as u32);
            for start in (0..data.len()).filter(|&k| (k / st) % n == 0) {
                for j in 0..n {
                    self.line[j] = data[start + j * st];
                }
                fft.process(&mut self.line);
                for j in 0..n {
                    data[start + j * st] = self.line[j];
                }
            }
        }
    }

    /// Energy and gradient; differences up to `tie` (at least
    /// `sqrt(machine epsilon)`) are treated as ties.
    pub fn eval(&mut self, u: &[T], grad: &mut [T], tie: T) -> T {
        let (params, table) = (self.params, self.table);
        let tie = tie.max(T::epsilon().sqrt());
        assemble(params, table, u, grad, tie, |g| self.nonlocal(u, g))
    }

    fn nonlocal(&mut self, u: &[T], grad: &mut [T]) -> T {
        let d = self.params.d();
        let w2 = self.params.spacing().powi(2 * d as i32);
        let mut buf = std::mem::take(&mut self.buf);
        for (b, &v) in buf.iter_mut().zip(u) {
            *b = Complex::new(v, T::zero());
        }
        self.transform(&mut buf, true);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b = *b * *k;
        }
        self.transform(&mut buf, false);
        let norm = T::of_usize(u.len());
        // sum_z K(z) (u(x) - u(x+z)) = K0 u(x) - (K * u)(x)
        let mut terms = vec![T::zero(); u.len()];
        for (k, (&v, b)) in u.iter().zip(&buf).enumerate() {
            let r = self.weight_sum * v - b.re / norm;
            grad[k] = T::of(4.0) * w2 * r;
            terms[k] = v * r;
        }
        self.buf = buf;
        T::of(2.0) * w2 * pairwise_sum(&terms)
    }
}

const KINK_SWEEPS: usize = 200;

/// Moves `grad` towards the smallest element of the subdifferential over
/// the convex kinks: `grad[x] -= c l`, `grad[y] += c l` with `l in [-1, 1]`,
/// by symmetric Gauss-Seidel sweeps over the kinks. Tied samples whose
/// gradients differ by at most `2c` end up moving together, so the step
/// does not pay for breaking the tie.
fn min_norm_subgradient<T: Real>(grad: &mut [T], kinks: &[Kink<T>]) {
    if kinks.is_empty() {
        return;
    }
    let mut lam = vec![T::zero(); kinks.len()];
    let scale = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
    let tol = T::of(1e-12) * scale;
    let visit = |e: usize, grad: &mut [T], lam: &mut [T]| {
        let Kink { x, y, c } = kinks[e];
        let gx = grad[x] + c * lam[e];
        let gy = grad[y] - c * lam[e];
        let l = ((gx - gy) / (T::of(2.0) * c)).max(-T::one()).min(T::one());
        grad[x] = gx - c * l;
        grad[y] = gy + c * l;
        let moved = (c * (l - lam[e])).abs();
        lam[e] = l;
        moved
    };
    for _ in 0..KINK_SWEEPS {
        let mut moved = T::zero();
        for e in 0..kinks.len() {
            moved = moved.max(visit(e, grad, &mut lam));
        }
        for e in (0..kinks.len()).rev() {
            moved = moved.max(visit(e, grad, &mut lam));
        }
        if moved <= tol {
            break;
        }
    }
}

pub fn energy_gradient<T: Real>(field: &ScalarField<T>, table: &KernelTable<T>) -> Vec<T> {
    let mut g = vec![T::zero(); field.len()];
    energy_and_gradient(field.params(), table, field.values(), &mut g);
    g
}

/// `L^-d [ (C_tau - 1) Per_1(E) - sum_x sum_z hg^(2d) K(z) |chi(x) - chi(x+z)| ]`
/// for an indicator field.
pub fn sharp_interface_energy<T: Real>(indicator: &ScalarField<T>, table: &KernelTable<T>) -> Result<T> {
    if let Some(k) = indicator
        .values()
        .iter()
        .position(|&v| v != T::zero() && v != T::one())
    {
        return Err(Error::Field(format!(
            "sample {k} = {} is not 0 or 1",
            indicator.values()[k]
        )));
    }
    let params = indicator.params();
    let d = params.d();
    let n = params.cells();
    let hg = params.spacing();
    let u = indicator.values();
    let mut jumps = T::zero();
    for x in 0..u.len() {
        for i in 0..d {
            jumps += (u[indicator.shifted(x, i, 1)] - u[x]).abs();
        }
    }
    let per = jumps * hg.powi(d as i32 - 1);
    let w2 = hg.powi(2 * d as i32);
    let weights = table.periodized();
    let mut mc = vec![0usize; d];
    let mut per_offset = vec![T::zero(); u.len()];
    for (m, out) in per_offset.iter_mut().enumerate().skip(1) {
        offset_coords(m, n, d, &mut mc);
        let mut acc = T::zero();
        for_each_run(n, d, &mc, |xs, ys, len| {
            for j in 0..len {
                acc += (u[xs + j] - u[ys + j]).abs();
            }
        });
        *out = weights[m] * acc * w2;
    }
    let nl = pairwise_sum(&per_offset);
    let vol = params.box_len().powi(d as i32);
    Ok(((table.c_tau() - T::one()) * per - nl) / vol)
}

/// The stripe of [`make_stripe_field`] with every interface replaced by the
/// logistic transition `1 / (1 + exp(-s / alpha))`, `s` the signed distance to
/// the nearest interface (positive where the sharp stripe is 1).
pub fn mollified_stripe_field<T: Real>(
    params: &Params<T>,
    axis: usize,
    half_period: T,
    phase: T,
) -> Result<ScalarField<T>> {
    make_stripe_field(params, axis, half_period, phase)?;
    let h = half_period.f64();
    let ph = phase.f64();
    let alpha = params.alpha().f64();
    Ok(ScalarField::from_fn(params.clone(), |x| {
        let t = (x[axis].f64() - ph).rem_euclid(2.0 * h);
        let s = if t < h { t.min(h - t) } else { -(t - h).min(2.0 * h - t) };
        T::of(1.0 / (1.0 + (-s / alpha).exp()))
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaPoint<T> {
    pub eps: T,
    pub energy: T,
    pub sharp: T,
    /// `|energy - sharp| / |sharp|`.
    pub relative_gap: T,
}

/// Diffuse energy of the mollified stripe against the sharp-interface energy
/// of the same stripe, one point per entry of `eps` (same grid throughout).
pub fn gamma_trend<T: Real>(
    params: &Params<T>,
    axis: usize,
    half_period: T,
    eps: &[T],
) -> Result<Vec<GammaPoint<T>>> {
    let sharp_field = make_stripe_field(params, axis, half_period, T::zero())?;
    let sharp = sharp_interface_energy(&sharp_field, &KernelTable::new(params)?)?;
    eps.iter()
        .map(|&e| {
            let p = params.with_eps(e)?;
            let table = KernelTable::new(&p)?;
            let field = mollified_stripe_field(&p, axis, half_period, T::zero())?;
            let energy = total_energy(&field, &table).total;
            Ok(GammaPoint {
                eps: e,
                energy,
                sharp,
                relative_gap: (energy - sharp).abs() / sharp.abs(),
            })
        })
        .collect()
}

/// True when the gap shrinks strictly along the sequence.
pub fn gamma_gap_decreasing<T: Real>(points: &[GammaPoint<T>]) -> bool {
    points.windows(2).all(|w| w[1].relative_gap < w[0].relative_gap)
}

/// CSV with header `eps,energy,sharp_energy,relative_gap` (energies per unit
/// volume, eps dimensionless).
pub fn gamma_trend_csv<T: Real>(points: &[GammaPoint<T>]) -> String {
    let mut s = String::from("eps,energy,sharp_energy,relative_gap\n");
    for g in points {
        s.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e}\n",
            g.eps.f64(),
            g.energy.f64(),
            g.sharp.f64(),
            g.relative_gap.f64()
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{make_random_field, make_stripe_field};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup(d: usize, p: f64, tau: f64, l: f64, n: f64) -> (Params<f64>, KernelTable<f64>) {
        let prm = Params::new(d, p, tau, 0.1, l, n).unwrap();
        let t = KernelTable::new(&prm).unwrap();
        (prm, t)
    }

    #[test]
    fn segment_well_is_the_segment_mean() {
        for (a, b) in [(0.0, 1.0), (0.2, 0.7), (0.9, 0.1), (0.4, 0.4)] {
            let direct = if a == b {
                double_well(a)
            } else {
                let n = 20000;
                let mut s = 0.0;
                for k in 0..n {
                    let t = a + (b - a) * (k as f64 + 0.5) / n as f64;
                    s += double_well(t);
                }
                s / n as f64
            };
            assert_relative_eq!(segment_well(a, b), direct, max_relative = 1e-8);
        }
        assert_relative_eq!(segment_well(0.0, 1.0), 1.0 / 30.0, max_relative = 1e-15);
    }

    #[test]
    fn modica_mortola_examples() {
        let p = Params::new(1, 3.0, 1.0, 1.0, 1.0, 64.0).unwrap();
        assert_eq!(modica_mortola(&ScalarField::constant(p.clone(), 0.0).unwrap(), 1.0), 0.0);
        let half = ScalarField::constant(p.clone(), 0.5).unwrap();
        assert_relative_eq!(modica_mortola(&half, 1.0), 3.0 / 16.0, max_relative = 1e-14);
        // triangle wave of period 1 and slope 2: 3*4 + 3*(1/30)*... -> 12.1
        let mut prev = f64::INFINITY;
        for n in [64.0, 128.0, 256.0, 512.0] {
            let p = Params::<f64>::new(1, 3.0, 1.0, 1.0, 1.0, n).unwrap();
            let tri = ScalarField::from_fn(p, |x| 1.0 - (2.0 * x[0] - 1.0).abs());
            let err = (modica_mortola(&tri, 1.0f64) - 12.1).abs();
            assert!(err < 30.0 / n, "n={n} err={err}");
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn nonlocal_matches_naive_loop_on_four_samples() {
        let (p, t) = setup(1, 3.0, 1.0, 1.0, 4.0);
        let u = ScalarField::new(p.clone(), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (v, _) = nonlocal_energy(&u, &t);
        let hg = p.spacing();
        let lm = t.lattice_marginal();
        let mut naive = 0.0;
        for x in 0..4i64 {
            for z in -400000i64..=400000 {
                let y = (x + z).rem_euclid(4);
                let diff = u.values()[x as usize] - u.values()[y as usize];
                naive += hg * hg * lm.value(z) * diff * diff;
            }
        }
        assert_relative_eq!(v, naive, max_relative = 1e-9);
        assert_eq!(nonlocal_energy(&ScalarField::constant(p, 0.3).unwrap(), &t).0, 0.0);
    }

    #[test]
    fn constant_fields() {
        let (p, t) = setup(1, 3.0, 1.0, 1.0, 16.0);
        let zero = ScalarField::constant(p.clone(), 0.0).unwrap();
        assert_eq!(total_energy(&zero, &t).total, 0.0);
        let half = ScalarField::constant(p.clone(), 0.5).unwrap();
        let e = total_energy(&half, &t);
        assert!(e.total.abs() < 1e-12 && e.nonlocal_term == 0.0);
        let g = energy_gradient(&half, &t);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences_in_two_dimensions() {
        let (p, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        for seed in 0..3 {
            let vals = (0..p.len())
                .map(|k| 0.5 + 0.4 * (1.2345 * k as f64 + seed as f64).sin())
                .collect();
            let u = ScalarField::new(p.clone(), vals).unwrap();
            let g = energy_gradient(&u, &t);
            let h = 1e-6;
            for k in (0..u.len()).step_by(7) {
                let mut up = u.values().to_vec();
                let mut dn = u.values().to_vec();
                up[k] += h;
                dn[k] -= h;
                let fp = total_energy(&ScalarField::new(p.clone(), up).unwrap(), &t).total;
                let fm = total_energy(&ScalarField::new(p.clone(), dn).unwrap(), &t).total;
                let fd = (fp - fm) / (2.0 * h);
                let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!((fd - g[k]).abs() <= 1e-5 * scale, "k={k} fd={fd} g={}", g[k]);
            }
        }
    }

    #[test]
    fn spectral_matches_direct_sum() {
        for (d, pp) in [(1, 3.0), (2, 4.0)] {
            let (p, t) = setup(d, pp, 0.5, 1.6, 10.0);
            let u = make_random_field(&p, 3, 0.2).unwrap();
            let mut g = vec![0.0; u.len()];
            let mut gs = vec![0.0; u.len()];
            let e = energy_and_gradient(&p, &t, u.values(), &mut g);
            let es = SpectralEnergy::new(&p, &t).unwrap().eval(u.values(), &mut gs, 0.0);
            assert_relative_eq!(es, e, max_relative = 1e-12);
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in g.iter().zip(&gs) {
                assert!((a - b).abs() <= 1e-11 * scale);
            }
        }
    }

    #[test]
    fn gradient_descends_on_nearly_tied_rows() {
        // profile along x_0, constant along x_1 up to rounding-sized noise
        let (p, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let n = p.cells();
        let vals: Vec<f64> = (0..p.len())
            .map(|k| {
                let (r, c) = (k / n, k % n);
                0.5 + 0.4 * (0.7 * r as f64).sin() + 0.05 * (r == 3) as u8 as f64 * (c as f64 / 4.0).cos()
                    + 1e-13 * ((k * 7919) % 13) as f64
            })
            .collect();
        let mut g = vec![0.0; vals.len()];
        let e = energy_and_gradient(&p, &t, &vals, &mut g);
        let step = 1e-3 / g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let moved: Vec<f64> = vals.iter().zip(&g).map(|(v, gi)| v - step * gi).collect();
        let predicted = -step * g.iter().map(|v| v * v).sum::<f64>();
        let actual = energy_and_gradient(&p, &t, &moved, &mut vec![0.0; vals.len()]) - e;
        assert!(predicted < 0.0);
        assert!((actual - predicted).abs() < 0.1 * predicted.abs(), "{actual} vs {predicted}");
    }

    #[test]
    fn invariances() {
        let (p, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let u = make_random_field(&p, 5, 0.3).unwrap();
        let e = total_energy(&u, &t).total;
        for v in [u.rolled(0, 3), u.rolled(1, -5), u.transposed(0, 1), u.swapped()] {
            assert_relative_eq!(total_energy(&v, &t).total, e, max_relative = 1e-12);
        }
        let g = energy_gradient(&u, &t);
        let gs = energy_gradient(&u.rolled(1, 2), &t);
        for x in 0..u.len() {
            assert_relative_eq!(gs[u.shifted(x, 1, 2)], g[x], max_relative = 1e-9, epsilon = 1e-14);
        }
    }

    #[test]
    fn stripe_energy_reduces_to_one_dimension() {
        let (p2, t2) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let (p1, _) = setup(1, 3.0, 0.5, 1.6, 10.0);
        let s2 = make_stripe_field(&p2, 1, 0.4, 0.0).unwrap();
        let s1 = make_stripe_field(&p1, 0, 0.4, 0.0).unwrap();
        assert_eq!(p1.alpha(), p2.alpha());
        let m2 = modica_mortola(&s2, p2.alpha()) / 1.6;
        assert_relative_eq!(m2, modica_mortola(&s1, p1.alpha()), max_relative = 1e-12);
        let s2t = make_stripe_field(&p2, 0, 0.4, 0.0).unwrap();
        let e2 = total_energy(&s2, &t2).total;
        assert_relative_eq!(total_energy(&s2t, &t2).total, e2, max_relative = 1e-12);
    }

    #[test]
    fn sharp_interface_examples() {
        let (p, t) = setup(1, 3.0, 1.0, 2.0, 8.0);
        let one = ScalarField::constant(p.clone(), 1.0).unwrap();
        assert_eq!(sharp_interface_energy(&one, &t).unwrap(), 0.0);
        assert!(sharp_interface_energy(&ScalarField::constant(p.clone(), 0.5).unwrap(), &t).is_err());
        let s = make_stripe_field(&p, 0, 1.0, 0.0).unwrap();
        // C_tau = 1 here, so only the nonlocal part remains
        let v = sharp_interface_energy(&s, &t).unwrap();
        assert!(v < 0.0);
    }

    #[test]
    fn generic_f32_energy_tracks_f64() {
        let (p, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let u = make_random_field(&p, 1, 0.3).unwrap();
        let e64 = total_energy(&u, &t).total;
        let u32f = u.cast::<f32>();
        let t32 = KernelTable::new(u32f.params()).unwrap();
        let e32 = total_energy(&u32f, &t32).total;
        assert!((e32 as f64 - e64).abs() < 1e-4 * e64.abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shift_invariance_one_dimension(seed in 0u64..500, k in -20isize..20) {
            let (p, t) = setup(1, 3.0, 0.4, 2.0, 16.0);
            let u = make_random_field(&p, seed, 0.2).unwrap();
            let a = total_energy(&u, &t).total;
            let b = total_energy(&u.rolled(0, k), &t).total;
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn mollified_stripe_is_antisymmetric_about_interfaces() {
        let prm = Params::<f64>::new(1, 3.0, 0.05, 0.1, 0.4, 400.0).unwrap();
        let u = mollified_stripe_field(&prm, 0, 0.05, 0.0).unwrap();
        let v = u.values();
        let n = v.len();
        // interface at x = 0.05 sits between cells 19 and 20
        for j in 0..10 {
            assert!((v[19 - j] + v[20 + j] - 1.0).abs() < 1e-12);
        }
        assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(n == 160 && v[10] > 0.99 && v[30] < 0.01);
        assert!(mollified_stripe_field(&prm, 0, 0.033, 0.0).is_err());
    }

    #[test]
    fn gamma_gap_shrinks_with_eps() {
        let prm = Params::new(1, 3.0, 0.05, 0.2, 0.4, 1600.0).unwrap();
        let pts = gamma_trend(&prm, 0, 0.05, &[0.2, 0.1, 0.05]).unwrap();
        assert!(gamma_gap_decreasing(&pts));
        assert!(pts.iter().all(|g| g.energy > g.sharp));
        assert_eq!(gamma_trend_csv(&pts).lines().count(), 4);
    }
}
