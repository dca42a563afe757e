//! The kernel `K_tau(z) = (|z|_1 + a)^-p` with `a = tau^(1/beta)`, its first
//! marginal `Khat(t) = c (|t| + a)^-q` (`q = p - d + 1`), moments, tail
//! bounds, and the lattice weights used by the discrete energy.
//!
//! On the grid the kernel is sampled at lattice offsets and rescaled by a
//! factor `lambda` so that the lattice first moment equals `C_tau` exactly;
//! the Modica-Mortola weight `C_tau - 1` and the nonlocal sum then balance
//! on the lattice the same way they do in the continuum. Images of the torus
//! are summed explicitly inside a box and the rest is added as a closed-form
//! far field.

use crate::error::{Error, Result};
use crate::{Params, Real};

/// `(|z|_1 + a)^-p`. Components are summed in sorted order so the value is
/// exactly invariant under coordinate permutations.
pub fn kernel_value<T: Real>(zeta: &[T], params: &Params<T>) -> T {
    let mut abs: Vec<T> = zeta.iter().map(|z| z.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let s = abs.iter().fold(T::zero(), |acc, &z| acc + z);
    (s + params.offset()).powf(-params.p())
}

/// Prefactor `c` of the marginal, `2^(d-1) / ((p-1)(p-2)...(p-d+1))`.
pub(crate) fn marginal_coefficient(d: usize, p: f64) -> f64 {
    (1..d).fold(1.0, |c, j| c * 2.0 / (p - j as f64))
}

/// `Khat(t)`: the kernel integrated over the other `d-1` coordinates.
pub fn kernel_marginal<T: Real>(t: T, params: &Params<T>) -> T {
    let d = params.d();
    let p = params.p().f64();
    let q = p - d as f64 + 1.0;
    let c = marginal_coefficient(d, p);
    T::of(c * (t.f64().abs() + params.offset().f64()).powf(-q))
}

/// `2 c a^(2-q) / ((q-1)(q-2))`, the first moment of the marginal.
fn moment_closed_form(d: usize, p: f64, a: f64) -> f64 {
    let q = p - d as f64 + 1.0;
    2.0 * marginal_coefficient(d, p) * a.powf(2.0 - q) / ((q - 1.0) * (q - 2.0))
}

/// `(C_tau, J_c)`: first moment of the marginal for this `tau`, and for the
/// unrescaled kernel (`a = 1`).
pub fn kernel_moments<T: Real>(params: &Params<T>) -> Result<(T, T)> {
    let d = params.d();
    let p = params.p().f64();
    let c = moment_closed_form(d, p, params.offset().f64());
    let j = moment_closed_form(d, p, 1.0);
    if !c.is_finite() || !j.is_finite() {
        return Err(Error::Quadrature { estimate: f64::INFINITY });
    }
    Ok((T::of(c), T::of(j)))
}

/// Integral of `f` over `[0, inf)` by double-exponential quadrature after
/// the map `t = s x / (1 - x)`.
pub(crate) fn integrate_half_line(f: impl Fn(f64) -> f64, scale: f64, tol: f64) -> (f64, f64) {
    let g = |x: f64| {
        if x >= 1.0 {
            return 0.0;
        }
        let om = 1.0 - x;
        let t = scale * x / om;
        f(t) * scale / (om * om)
    };
    let out = quadrature::double_exponential::integrate(g, 0.0, 1.0, tol);
    (out.integral, out.error_estimate)
}

/// Marginal evaluated by quadrature of the level-set integral
/// `c_{d-1} int_0^inf s^(d-2) (|t| + s + a)^-p ds`.
pub fn kernel_marginal_quadrature<T: Real>(t: T, params: &Params<T>) -> Result<T> {
    let d = params.d();
    let p = params.p().f64();
    let a = params.offset().f64();
    let t = t.f64().abs();
    if d == 1 {
        return Ok(T::of((t + a).powf(-p)));
    }
    let fact: f64 = (1..d - 1).map(|k| k as f64).product();
    let cd = 2f64.powi(d as i32 - 1) / fact;
    let k = d as i32 - 2;
    let (v, err) = integrate_half_line(|s| s.powi(k) * (t + s + a).powf(-p), t + a, 1e-14);
    let v = cd * v;
    if err * cd > params.quad_tol().f64() * v.abs().max(1.0) {
        return Err(Error::Quadrature { estimate: err * cd });
    }
    Ok(T::of(v))
}

/// `(C_tau, J_c)` by nested quadrature, independent of the closed forms.
pub fn kernel_moments_quadrature<T: Real>(params: &Params<T>) -> Result<(T, T)> {
    let tol = params.quad_tol().f64();
    let one = |a: f64| -> Result<f64> {
        let d = params.d();
        let p = params.p().f64();
        let fact: f64 = (1..d.max(2) - 1).map(|k| k as f64).product();
        let cd = 2f64.powi(d as i32 - 1) / fact;
        let k = d as i32 - 2;
        let marginal = |t: f64| -> f64 {
            if d == 1 {
                (t + a).powf(-p)
            } else {
                cd * integrate_half_line(|s| s.powi(k) * (t + s + a).powf(-p), t + a, 1e-15).0
            }
        };
        let (v, err) = integrate_half_line(|t| 2.0 * t * marginal(t), a, 1e-14);
        if err > tol * v.abs().max(1.0) {
            return Err(Error::Quadrature { estimate: err });
        }
        Ok(v)
    };
    let c = one(params.offset().f64())?;
    let j = one(1.0)?;
    Ok((T::of(c), T::of(j)))
}

/// Closed-form upper bound on `int_{|z|_1 > r} K_tau`, using
/// `s^(d-1) <= (s+a)^(d-1)` on the level sets. Exact for `d = 1`.
pub fn tail_bound<T: Real>(r: T, params: &Params<T>) -> T {
    let d = params.d();
    let p = params.p().f64();
    let a = params.offset().f64();
    let fact: f64 = (1..d).map(|k| k as f64).product();
    let v = 2f64.powi(d as i32) / fact * (r.f64().max(0.0) + a).powf(d as f64 - p) / (p - d as f64);
    T::of(v)
}

/// Smallest `r` with `tail_bound(r) < 1e-8 |C_tau|`.
pub fn default_r_cut<T: Real>(params: &Params<T>) -> T {
    let d = params.d();
    let p = params.p().f64();
    let a = params.offset().f64();
    let c = moment_closed_form(d, p, a).abs();
    let fact: f64 = (1..d).map(|k| k as f64).product();
    let target = 1e-8 * c * (p - d as f64) * fact / 2f64.powi(d as i32);
    let r = target.powf(1.0 / (d as f64 - p)) - a;
    T::of(r.max(a))
}

/// Integral of `(|z|_1 + a)^-p` over the complement of the cube
/// `[-b, b]^k` in `R^k`.
pub(crate) fn box_complement(k: usize, p: f64, a: f64, b: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let denom: f64 = (1..=k).map(|j| j as f64 - p).product();
    let mut acc = 0.0;
    let mut binom = 1.0;
    for s in 1..=k {
        binom *= (k - s + 1) as f64 / s as f64;
        let sign = if (k - s) % 2 == 0 { 1.0 } else { -1.0 };
        acc += binom * sign * (s as f64 * b + a).powf(k as f64 - p);
    }
    -(2f64.powi(k as i32)) * acc / denom
}

/// Number of points of `Z^k` with 1-norm `j`.
fn sphere_count(k: usize, j: usize) -> f64 {
    if j == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut binom_k = 1.0;
    for i in 1..=k.min(j) {
        binom_k *= (k - i + 1) as f64 / i as f64;
        let mut binom_j = 1.0;
        for t in 1..i {
            binom_j *= (j - t) as f64 / t as f64;
        }
        total += 2f64.powi(i as i32) * binom_k * binom_j;
    }
    total
}

/// Polynomial coefficients (ascending) of `sphere_count(k, x)` valid for
/// integer `x >= k`.
fn sphere_polynomial(k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k.max(1)];
    let mut binom_k = 1.0;
    for i in 1..=k {
        binom_k *= (k - i + 1) as f64 / i as f64;
        // C(x-1, i-1) = prod_{t=1}^{i-1} (x - t) / t
        let mut poly = vec![1.0];
        for t in 1..i {
            let mut next = vec![0.0; poly.len() + 1];
            for (e, &c) in poly.iter().enumerate() {
                next[e + 1] += c / t as f64;
                next[e] -= c;
            }
            poly = next;
        }
        for (e, &c) in poly.iter().enumerate() {
            out[e] += 2f64.powi(i as i32) * binom_k * c;
        }
    }
    out
}

/// `int_x^inf t^e (A + t h)^-p dt`.
fn power_tail(e: usize, x: f64, big_a: f64, h: f64, p: f64) -> f64 {
    let y = big_a + x * h;
    let mut acc = 0.0;
    let mut binom = 1.0;
    for i in 0..=e {
        if i > 0 {
            binom *= (e - i + 1) as f64 / i as f64;
        }
        acc += binom * (-big_a).powi((e - i) as i32) * y.powf(i as f64 - p + 1.0) / (p - i as f64 - 1.0);
    }
    acc / h.powi(e as i32 + 1)
}

/// Lattice marginal `hg^(d-1) sum_{z in Z^(d-1)} lambda K(m hg, z hg)` as a
/// function of the integer offset `m`, for the grid spacing of `params`.
#[derive(Clone, Debug)]
pub struct LatticeMarginal {
    hg: f64,
    a: f64,
    q: f64,
    c: f64,
    lambda: f64,
    near: Vec<f64>,
}

const NEAR_OFFSETS: usize = 1024;
const SHELL_TERMS: usize = 1024;

impl LatticeMarginal {
    pub fn new<T: Real>(params: &Params<T>) -> Self {
        let d = params.d();
        let p = params.p().f64();
        let a = params.offset().f64();
        let hg = params.spacing().f64();
        let q = p - d as f64 + 1.0;
        let c = marginal_coefficient(d, p);
        let k = d - 1;
        let poly = sphere_polynomial(k);
        let near: Vec<f64> = (0..=NEAR_OFFSETS)
            .map(|m| {
                let base = m as f64 * hg + a;
                if k == 0 {
                    return base.powf(-p);
                }
                let mut s = 0.0;
                for j in (0..=SHELL_TERMS).rev() {
                    s += sphere_count(k, j) * (base + j as f64 * hg).powf(-p);
                }
                let x0 = SHELL_TERMS as f64 + 0.5;
                let tail: f64 = poly
                    .iter()
                    .enumerate()
                    .map(|(e, &ce)| ce * power_tail(e, x0, base, hg, p))
                    .sum();
                hg.powi(k as i32) * (s + tail)
            })
            .collect();
        // lattice first moment of the unscaled kernel
        let mut lat = 0.0;
        for m in (1..=NEAR_OFFSETS).rev() {
            lat += 2.0 * hg * (m as f64 * hg) * near[m];
        }
        let x = (NEAR_OFFSETS as f64 + 0.5) * hg + a;
        lat += 2.0 * c * (x.powf(2.0 - q) / (q - 2.0) - a * x.powf(1.0 - q) / (q - 1.0));
        let lambda = moment_closed_form(d, p, a) / lat;
        Self {
            hg,
            a,
            q,
            c,
            lambda,
            near,
        }
    }

    /// Moment-matching factor `C_tau / (lattice moment)`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Scaled lattice marginal at integer offset `m`.
    pub fn value(&self, m: i64) -> f64 {
        let m = m.unsigned_abs() as usize;
        if m <= NEAR_OFFSETS {
            self.lambda * self.near[m]
        } else {
            self.lambda * self.c * (m as f64 * self.hg + self.a).powf(-self.q)
        }
    }

    /// Periodized marginal for period `period` cells, indexed by residue.
    /// Images are summed to a radius of many periods and the remainder is
    /// added as its mean value. Returns the weights and a bound on the far
    /// field that was averaged.
    pub fn periodized(&self, period: usize) -> (Vec<f64>, f64) {
        let images = ((NEAR_OFFSETS + (1 << 16)) / period.max(1)).max(64) as i64;
        let p = period as i64;
        let x = ((images as f64) + 0.5) * period as f64 * self.hg + self.a;
        let far_total = 2.0 * self.lambda * self.c * x.powf(1.0 - self.q) / (self.q - 1.0) / self.hg;
        let far = far_total / period as f64;
        let w = (0..period)
            .map(|r| {
                let r = r as i64;
                let rc = if 2 * r > p { r - p } else { r };
                let mut s = 0.0;
                for k in (1..=images).rev() {
                    s += self.value(rc + k * p) + self.value(rc - k * p);
                }
                s + self.value(rc) + far
            })
            .collect();
        (w, far_total)
    }
}

/// Monotone cubic Hermite interpolation (Fritsch-Carlson slopes).
#[derive(Clone, Debug)]
struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl MonotoneCubic {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
        let mut m = vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for k in 1..n - 1 {
            m[k] = if delta[k - 1] * delta[k] <= 0.0 {
                0.0
            } else {
                let w1 = 2.0 * (x[k + 1] - x[k]) + (x[k] - x[k - 1]);
                let w2 = (x[k + 1] - x[k]) + 2.0 * (x[k] - x[k - 1]);
                (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])
            };
        }
        Self { x, y, m }
    }

    fn eval(&self, t: f64) -> f64 {
        let k = match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(k) => return self.y[k],
            Err(k) => k.clamp(1, self.x.len() - 1) - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.m[k] + h01 * self.y[k + 1] + h11 * h * self.m[k + 1]
    }
}

/// Kernel data for one parameter set: continuum table and moments, plus the
/// torus weights for the grid of `params`.
#[derive(Clone, Debug)]
pub struct KernelTable<T> {
    params: Params<T>,
    radial: MonotoneCubic,
    tail_coefficient: T,
    c_tau: T,
    j_c: T,
    r_cut: T,
    lattice: LatticeMarginal,
    /// `lambda K` summed over all torus images, per torus offset class.
    periodized: Vec<T>,
    /// `lambda K(m hg e_i + .)` summed over perpendicular images only, for
    /// `0 <= m < N`; row `m`, column the perpendicular class.
    perp: Vec<T>,
    marginal_near: Vec<T>,
    marginal_per: Vec<T>,
    far_moment: T,
    truncation_bound: T,
}

const TABLE_SAMPLES: usize = 400;

impl<T: Real> KernelTable<T> {
    pub fn new(params: &Params<T>) -> Result<Self> {
        let (c_tau, j_c) = kernel_moments(params)?;
        let r_cut = params.r_cut_override().unwrap_or_else(|| default_r_cut(params));
        let d = params.d();
        let p = params.p().f64();
        let a = params.offset().f64();
        let q = p - d as f64 + 1.0;
        let c = marginal_coefficient(d, p);

        let lo = (a * 1e-4).ln();
        let hi = r_cut.f64().max(a).ln();
        let mut xs = vec![0.0];
        xs.extend((0..TABLE_SAMPLES).map(|k| (lo + (hi - lo) * k as f64 / (TABLE_SAMPLES - 1) as f64).exp()));
        let ys = xs.iter().map(|&t| c * (t + a).powf(-q)).collect();
        let radial = MonotoneCubic::new(xs, ys);

        let lattice = LatticeMarginal::new(params);
        let n = params.cells();
        let hg = params.spacing().f64();
        let box_len = params.box_len().f64();
        let lambda = lattice.lambda();
        let perp_len = n.pow(d as u32 - 1);

        let reach: i64 = match d {
            1 => 512,
            2 => 12,
            3 => 4,
            _ => 2,
        };
        let b = (reach as f64 + 0.5) * box_len;
        let far_full = lambda * box_complement(d, p, a, b) / box_len.powi(d as i32);

        let wrap = |m: usize| -> f64 {
            let m = m as i64;
            let mm = if 2 * m > n as i64 { m - n as i64 } else { m };
            mm as f64 * hg
        };
        let image_sum = |coords: &[f64], dims: usize, first: f64| -> f64 {
            // sum over images k in [-reach, reach]^dims of K(first, coords + k L)
            let mut total = 0.0;
            let side = 2 * reach as usize + 1;
            let count = side.pow(dims as u32);
            for idx in 0..count {
                let mut rem = idx;
                let mut s = first.abs();
                for &x in coords.iter().take(dims) {
                    let k = (rem % side) as i64 - reach;
                    rem /= side;
                    s += (x + k as f64 * box_len).abs();
                }
                total += (s + a).powf(-p);
            }
            total
        };

        let mut periodized = vec![T::zero(); params.len()];
        let mut coords = vec![0.0; d];
        for (idx, w) in periodized.iter_mut().enumerate() {
            let mut rem = idx;
            for k in (0..d).rev() {
                coords[k] = wrap(rem % n);
                rem /= n;
            }
            *w = T::of(lambda * image_sum(&coords, d, 0.0) + far_full);
        }

        let mut perp = vec![T::zero(); n * perp_len];
        let mut pc = vec![0.0; d.max(2) - 1];
        for m in 0..n {
            let rho = m as f64 * hg;
            let far = if d > 1 {
                lambda * box_complement(d - 1, p, a + rho, b) / box_len.powi(d as i32 - 1)
            } else {
                0.0
            };
            for r in 0..perp_len {
                let mut rem = r;
                for k in (0..d - 1).rev() {
                    pc[k] = wrap(rem % n);
                    rem /= n;
                }
                perp[m * perp_len + r] = T::of(lambda * image_sum(&pc, d - 1, rho) + far);
            }
        }
        let cell_perp = hg.powi(d as i32 - 1);
        let marginal_near: Vec<T> = (0..n)
            .map(|m| {
                let s: f64 = perp[m * perp_len..(m + 1) * perp_len].iter().map(|v| v.f64()).sum();
                T::of(s * cell_perp)
            })
            .collect();
        let marginal_per: Vec<T> = (0..n)
            .map(|r| {
                let s: f64 = periodized[r * perp_len..(r + 1) * perp_len].iter().map(|v| v.f64()).sum();
                T::of(s * cell_perp)
            })
            .collect();
        let mut near_moment = 0.0;
        for m in (1..n).rev() {
            near_moment += 2.0 * hg * (m as f64 * hg) * marginal_near[m].f64();
        }
        let far_moment = T::of(c_tau.f64() - near_moment);

        // first-order bound on replacing far images by their mean
        let shrunk = (b - 0.5 * d as f64 * box_len).max(box_len);
        let lip = lambda * p * 0.5 * d as f64 * box_len * box_complement(d, p + 1.0, a, shrunk)
            / box_len.powi(d as i32);
        let truncation_bound = T::of(lip * box_len.powi(d as i32));

        Ok(Self {
            params: params.clone(),
            radial,
            tail_coefficient: T::of(c),
            c_tau,
            j_c,
            r_cut,
            lattice,
            periodized,
            perp,
            marginal_near,
            marginal_per,
            far_moment,
            truncation_bound,
        })
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }
    pub fn c_tau(&self) -> T {
        self.c_tau
    }
    pub fn j_c(&self) -> T {
        self.j_c
    }
    pub fn r_cut(&self) -> T {
        self.r_cut
    }
    /// `c` in the bound `Khat(t) <= c |t|^-q` used beyond `r_cut`.
    pub fn tail_coefficient(&self) -> T {
        self.tail_coefficient
    }
    pub fn lambda(&self) -> T {
        T::of(self.lattice.lambda())
    }
    pub fn lattice_marginal(&self) -> &LatticeMarginal {
        &self.lattice
    }

    /// Tabulated continuum marginal.
    pub fn marginal_lookup(&self, t: T) -> T {
        let t = t.f64().abs();
        let r = self.r_cut.f64();
        if t <= r {
            T::of(self.radial.eval(t))
        } else {
            let q = self.params.p().f64() - self.params.d() as f64 + 1.0;
            let a = self.params.offset().f64();
            T::of(self.tail_coefficient.f64() * (t + a).powf(-q))
        }
    }

    /// Torus weight of offset class `idx` (row-major, like field samples).
    pub fn periodized(&self) -> &[T] {
        &self.periodized
    }

    /// Weight with perpendicular images only: first coordinate `m` cells
    /// (`|m| < N`), perpendicular class `r`.
    #[inline]
    pub fn perp_weight(&self, m: usize, r: usize) -> T {
        let perp_len = self.perp.len() / self.params.cells();
        self.perp[m * perp_len + r]
    }

    /// Lattice marginal at `|m| < N` cells.
    pub fn marginal_near(&self) -> &[T] {
        &self.marginal_near
    }

    /// Lattice marginal folded onto the torus, by residue.
    pub fn marginal_periodized(&self) -> &[T] {
        &self.marginal_per
    }

    /// `C_tau` minus the lattice moment carried by `|m| < N`.
    pub fn far_moment(&self) -> T {
        self.far_moment
    }

    /// Bound on the error of the far-field average in the nonlocal energy
    /// density.
    pub fn truncation_bound(&self) -> T {
        self.truncation_bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prm(d: usize, p: f64, tau: f64) -> Params<f64> {
        Params::new(d, p, tau, 0.1, 1.0, 8.0).unwrap()
    }

    #[test]
    fn kernel_values() {
        let p = prm(2, 4.0, 1.0);
        assert_eq!(kernel_value(&[1.0, 0.0], &p), 1.0 / 16.0);
        assert_eq!(kernel_value(&[0.0, 0.0], &p), 1.0);
        assert_eq!(kernel_value(&[0.3, -0.2], &p), kernel_value(&[-0.2, 0.3], &p));
    }

    #[test]
    fn marginal_closed_form_and_quadrature() {
        let p = prm(2, 4.0, 1.0);
        assert_relative_eq!(kernel_marginal(0.0, &p), 2.0 / 3.0, max_relative = 1e-15);
        let qd = kernel_marginal_quadrature(0.0, &p).unwrap();
        assert!((qd - 2.0 / 3.0).abs() < 1e-10);
        let p1 = prm(1, 3.0, 0.3);
        for t in [0.0, 0.2, 1.5] {
            assert_eq!(kernel_marginal(t, &p1), kernel_value(&[t], &p1));
        }
        let p3 = prm(3, 6.5, 0.4);
        for t in [0.0, 0.1, 2.0] {
            let a = kernel_marginal(t, &p3);
            let b = kernel_marginal_quadrature(t, &p3).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
        assert!(kernel_marginal(1.0, &p) < kernel_marginal(0.0, &p));
    }

    #[test]
    fn moment_closed_forms() {
        let (c, j) = kernel_moments(&prm(1, 3.0, 1.0)).unwrap();
        assert_relative_eq!(c, 1.0, max_relative = 1e-15);
        assert_eq!(c, j);
        let (c4, _) = kernel_moments(&prm(1, 4.0, 1.0)).unwrap();
        assert_relative_eq!(c4, 1.0 / 3.0, max_relative = 1e-15);
        let (c2, _) = kernel_moments(&prm(2, 4.0, 0.5)).unwrap();
        assert_relative_eq!(c2, 2.0 / (3.0 * 0.5), max_relative = 1e-14);
    }

    #[test]
    fn moments_agree_with_quadrature() {
        for (d, p, tau) in [(1, 3.0, 1.0), (1, 4.0, 1.0), (1, 3.0, 0.05), (2, 4.0, 0.5), (2, 5.5, 0.2), (3, 5.0, 0.7)] {
            let prm = prm(d, p, tau);
            let (c, j) = kernel_moments(&prm).unwrap();
            let (cq, jq) = kernel_moments_quadrature(&prm).unwrap();
            assert!((c - cq).abs() <= 1e-8 * c.max(1.0), "{d} {p} {tau}: {c} vs {cq}");
            assert!((j - jq).abs() <= 1e-8 * j.max(1.0));
        }
    }

    #[test]
    fn tail_bound_examples() {
        let p = prm(1, 3.0, 1.0);
        assert_relative_eq!(tail_bound(9.0, &p), 0.01, max_relative = 1e-14);
        let radii: Vec<f64> = (0..50).map(|k| 0.1 * 1.3f64.powi(k)).collect();
        for w in radii.windows(2) {
            assert!(tail_bound(w[1], &p) <= tail_bound(w[0], &p));
        }
        let r = default_r_cut(&p);
        assert!(tail_bound(r, &p) <= 1.0001e-8);
    }

    #[test]
    fn tail_bound_dominates_quadrature() {
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let d = 1 + (next() * 2.0) as usize;
            let p = d as f64 + 2.0 + 2.0 * next();
            let tau = 0.05 + next();
            let r = 0.1 + 5.0 * next();
            let prm = prm(d, p, tau);
            let a = prm.offset();
            // |z|_1 = s level set has measure 2^d s^(d-1)/(d-1)!
            let fact: f64 = (1..d).map(|k| k as f64).product();
            let (v, _) = integrate_half_line(
                |t| 2f64.powi(d as i32) / fact * (t + r).powi(d as i32 - 1) * (t + r + a).powf(-p),
                r + a,
                1e-13,
            );
            assert!(tail_bound(r, &prm) >= v * (1.0 - 1e-9), "{d} {p} {tau} {r}");
        }
    }

    #[test]
    fn box_complement_matches_brute_force_in_two_dimensions() {
        let (p, a, b) = (4.0f64, 0.5f64, 2.0f64);
        let total = 4.0 * a.powf(2.0 - p) / ((p - 1.0) * (p - 2.0));
        let midpoint = |n: usize| {
            let h = b / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = (i as f64 + 0.5) * h;
                    let y = (j as f64 + 0.5) * h;
                    s += 4.0 * (x + y + a).powf(-p) * h * h;
                }
            }
            s
        };
        let inside = (4.0 * midpoint(2000) - midpoint(1000)) / 3.0;
        assert_relative_eq!(box_complement(2, p, a, b), total - inside, max_relative = 1e-7);
        assert_relative_eq!(box_complement(1, 3.0, 1.0, 9.0), 0.01, max_relative = 1e-14);
    }

    #[test]
    fn sphere_counts() {
        assert_eq!(sphere_count(1, 0), 1.0);
        assert_eq!(sphere_count(1, 5), 2.0);
        assert_eq!(sphere_count(2, 3), 12.0);
        assert_eq!(sphere_count(3, 2), 18.0);
        for k in 1..4 {
            let poly = sphere_polynomial(k);
            for j in k..12 {
                let v: f64 = poly.iter().enumerate().map(|(e, c)| c * (j as f64).powi(e as i32)).sum();
                assert_relative_eq!(v, sphere_count(k, j), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn lattice_marginal_matches_direct_sum_and_moment() {
        let p = Params::new(2, 4.0, 0.5, 0.1, 2.0, 10.0).unwrap();
        let lm = LatticeMarginal::new(&p);
        let hg = p.spacing();
        let a = p.offset();
        for m in [0i64, 1, 7] {
            let mut s = 0.0;
            for j in -20000i64..=20000 {
                s += hg * ((m.abs() + j.abs()) as f64 * hg + a).powf(-4.0);
            }
            assert_relative_eq!(lm.value(m) / lm.lambda(), s, max_relative = 1e-9);
        }
        let mut mom = 0.0;
        for m in 1..200000i64 {
            mom += 2.0 * hg * m as f64 * hg * lm.value(m);
        }
        let (c, _) = kernel_moments(&p).unwrap();
        assert_relative_eq!(mom, c, max_relative = 1e-4);
        assert!((lm.lambda() - 1.0).abs() < 0.05);
    }

    #[test]
    fn periodized_marginal_sums_images() {
        let p = Params::new(1, 3.0, 0.5, 0.1, 1.0, 16.0).unwrap();
        let lm = LatticeMarginal::new(&p);
        let (w, _) = lm.periodized(12);
        let mut direct = 0.0;
        for k in -200000i64..=200000 {
            direct += lm.value(5 + 12 * k);
        }
        assert_relative_eq!(w[5], direct, max_relative = 1e-8);
        assert_relative_eq!(w[5], w[7], max_relative = 1e-12);
    }

    #[test]
    fn table_is_positive_monotone_and_accurate() {
        let p = Params::new(2, 4.0, 0.5, 0.1, 1.6, 10.0).unwrap();
        let t = KernelTable::new(&p).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..2000 {
            let x = 1e-5 * 1.01f64.powi(k);
            let v = t.marginal_lookup(x);
            assert!(v > 0.0 && v <= prev);
            prev = v;
            assert_relative_eq!(v, kernel_marginal(x, &p), max_relative = 1e-4);
        }
    }

    #[test]
    fn torus_weights_are_consistent() {
        let p = Params::new(2, 4.0, 0.5, 0.1, 1.6, 10.0).unwrap();
        let t = KernelTable::new(&p).unwrap();
        let n = p.cells();
        // symmetry under reflection and axis exchange
        for i in 0..n {
            for j in 0..n {
                let w = t.periodized()[i * n + j];
                assert_relative_eq!(w, t.periodized()[((n - i) % n) * n + j], max_relative = 1e-12);
                assert_relative_eq!(w, t.periodized()[j * n + i], max_relative = 1e-12);
            }
        }
        // folding the perpendicular-only weights reproduces the full torus weights
        let direct: f64 = (-4000i64..=4000)
            .map(|k| t.lattice_marginal().value(3 + k * n as i64))
            .sum();
        assert_relative_eq!(t.marginal_periodized()[3], direct, max_relative = 1e-4);
        assert!(t.truncation_bound() >= 0.0);
        assert!(t.far_moment() > 0.0);
    }

    proptest! {
        #[test]
        fn kernel_symmetric(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let p = prm(3, 5.5, 0.3);
            let v = kernel_value(&[x, y, z], &p);
            prop_assert!(v > 0.0);
            prop_assert_eq!(v, kernel_value(&[-x, -y, -z], &p));
            prop_assert_eq!(v, kernel_value(&[z, x, y], &p));
        }

        #[test]
        fn marginal_completely_monotone(t in 0.01f64..5.0, tau in 0.05f64..1.0) {
            let p = prm(2, 4.5, tau);
            let h = 1e-2 * (t + p.offset());
            let f = |k: i32| kernel_marginal(t + k as f64 * h, &p);
            let d1 = f(1) - f(0);
            let d2 = f(2) - 2.0 * f(1) + f(0);
            let d3 = f(3) - 3.0 * f(2) + 3.0 * f(1) - f(0);
            let d4 = f(4) - 4.0 * f(3) + 6.0 * f(2) - 4.0 * f(1) + f(0);
            prop_assert!(d1 < 0.0 && d2 > 0.0 && d3 < 0.0 && d4 > 0.0);
        }
    }
}
