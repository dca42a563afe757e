//! Localized slice decomposition of the energy.
//!
//! For every direction `i` the energy is split into
//! - `R`: the Modica-Mortola mass along an `i`-slice against the interaction
//!   of pairs on the same slice,
//! - `V`, `W`: cross-slice parts built from the square
//!   `f_u = [(u(x+rho e_i) - u(x)) - (u(y+rho e_i) - u(y))]^2`,
//! - the flat-cell part, carrying the Modica-Mortola density of cells with
//!   `|grad u|_1 < theta_g`.
//!
//! A pair `(s, s+m)` of slice cells is spread over the cells of its window
//! with weight `1/min(|m|, N)`; windows of at least one period cover every
//! cell once. This is the closed form of averaging over all sub-intervals of
//! the window. All parts are stored per cell as contributions to `L^d F`, so
//! cube energies are plain cell sums.
//!
//! On the grid the lower bound is exact algebra: summing the identity
//! `(p3-p0)^2 + (p1-p2)^2 = a^2 + b^2 + c^2 + e^2 - (a-b)^2` over the
//! rectangles spanned by an offset shows that the residual is a sum of
//! nonnegative squares, and zero for fields depending on one coordinate.

use crate::energy::{double_well, segment_well, total_energy, EnergyBreakdown};
use crate::error::{param, Result};
use crate::kernel::KernelTable;
use crate::par::par_map;
use crate::{Params, Real, ScalarField};
use std::fmt::Write as _;
use std::path::Path;

/// `omega(t) = int_0^t 6 sqrt(W) = 3t^2 - 2t^3`.
pub fn omega<T: Real>(t: T) -> T {
    t * t * (T::of(3.0) - T::of(2.0) * t)
}

struct CellSplit<T> {
    /// Directional Modica-Mortola densities; they sum to `full` off flat cells.
    directional: Vec<T>,
    full: T,
    flat: bool,
}

fn cell_split<T: Real>(field: &ScalarField<T>, x: usize) -> CellSplit<T> {
    let params = field.params();
    let d = field.d();
    let hg = params.spacing();
    let alpha = params.alpha();
    let three = T::of(3.0);
    let u = field.values();
    let mut delta = vec![T::zero(); d];
    let mut wbar = vec![T::zero(); d];
    let mut s = T::zero();
    for i in 0..d {
        let nb = u[field.shifted(x, i, 1)];
        delta[i] = nb - u[x];
        wbar[i] = segment_well(u[x], nb);
        s += delta[i].abs();
    }
    let g = s / hg;
    let mut directional = vec![T::zero(); d];
    let full = if d == 1 {
        directional[0] = three * alpha * g * g + three / alpha * wbar[0];
        directional[0]
    } else if s > T::zero() {
        for i in 0..d {
            let theta = delta[i].abs() / s;
            directional[i] = three * alpha * delta[i].abs() / hg * g + three / alpha * theta * wbar[i];
        }
        directional.iter().copied().sum()
    } else {
        three / alpha * double_well(u[x])
    };
    CellSplit {
        directional,
        full,
        flat: g < params.theta_g(),
    }
}

/// Prefix sums of the slice Modica-Mortola mass along one `i`-slice.
#[derive(Clone, Debug)]
pub struct SlicePrefix<T> {
    pub direction: usize,
    /// Index of the slice cell with coordinate 0 along `direction`.
    pub x_perp: usize,
    /// `cum_mm[k]`: mass of cells `0..k`. Flat cells carry none.
    pub cum_mm: Vec<T>,
    /// Field samples along the slice.
    pub values: Vec<T>,
    pub spacing: T,
}

impl<T: Real> SlicePrefix<T> {
    /// Slice through cell `x_perp` (any cell of the slice) along `direction`.
    pub fn new(field: &ScalarField<T>, direction: usize, x_perp: usize) -> Result<Self> {
        if direction >= field.d() {
            return Err(param("direction", format!("{direction} >= d = {}", field.d())));
        }
        if x_perp >= field.len() {
            return Err(param("x_perp", format!("{x_perp} outside the grid")));
        }
        let n = field.cells();
        let stride = field.stride(direction);
        let base = x_perp - (x_perp / stride % n) * stride;
        let hg = field.params().spacing();
        let mut cum_mm = Vec::with_capacity(n + 1);
        let mut values = Vec::with_capacity(n);
        let mut acc = T::zero();
        cum_mm.push(acc);
        for s in 0..n {
            let x = base + s * stride;
            let c = cell_split(field, x);
            if !c.flat {
                acc += hg * c.directional[direction];
            }
            cum_mm.push(acc);
            values.push(field.values()[x]);
        }
        Ok(Self {
            direction,
            x_perp: base,
            cum_mm,
            values,
            spacing: hg,
        })
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    /// Mass over one period.
    pub fn total(&self) -> T {
        self.cum_mm[self.cells()]
    }

    pub fn cell_mass(&self, c: usize) -> T {
        self.cum_mm[c + 1] - self.cum_mm[c]
    }

    /// Mass of cells `start .. start+len`, unrolled periodically.
    pub fn window(&self, start: usize, len: usize) -> T {
        let n = self.cells();
        let start = start % n;
        let rem = len % n;
        let whole = T::of_usize(len / n) * self.total();
        let part = if start + rem <= n {
            self.cum_mm[start + rem] - self.cum_mm[start]
        } else {
            self.total() - self.cum_mm[start] + self.cum_mm[start + rem - n]
        };
        whole + part
    }

    /// Mass from position 0 to `x` (length units, any sign).
    fn cumulative(&self, x: T) -> T {
        let n = self.cells() as i64;
        let pos = x / self.spacing;
        let c = pos.floor();
        let frac = pos - c;
        let c = c.to_i64().unwrap_or(0);
        let k = c.div_euclid(n);
        let r = c.rem_euclid(n) as usize;
        T::of(k as f64) * self.total() + self.cum_mm[r] + frac * self.cell_mass(r)
    }
}

/// Slice Modica-Mortola mass over `[s, t]` (positions in length units,
/// unrolled periodically; negative if `t < s`).
pub fn interval_mm<T: Real>(prefix: &SlicePrefix<T>, s: T, t: T) -> T {
    prefix.cumulative(t) - prefix.cumulative(s)
}

/// Adds `v` to cells `start .. start+len` (`len < n`) of a circular
/// difference array of length `n + 1`.
fn spread<T: Real>(diff: &mut [T], start: usize, len: usize, v: T) {
    let n = diff.len() - 1;
    diff[start] += v;
    if start + len <= n {
        diff[start + len] -= v;
    } else {
        diff[0] += v;
        diff[start + len - n] -= v;
    }
}

fn undiff<T: Real>(diff: &[T]) -> Vec<T> {
    let mut run = T::zero();
    diff[..diff.len() - 1]
        .iter()
        .map(|&v| {
            run += v;
            run
        })
        .collect()
}

/// `R` per slice cell (per unit perpendicular measure).
fn slice_r_cells<T: Real>(prefix: &SlicePrefix<T>, table: &KernelTable<T>) -> Vec<T> {
    let n = prefix.cells();
    let hg = prefix.spacing;
    let u = &prefix.values;
    let kn = table.marginal_near();
    let kp = table.marginal_periodized();
    let hg2 = hg * hg;
    let mut diff = vec![T::zero(); n + 1];
    for s in 0..n {
        for m in 1..n {
            let share = hg2 * kn[m] / T::of_usize(m);
            let du = u[s] - u[(s + m) % n];
            spread(&mut diff, s, m, share * (prefix.window(s, m) - du * du));
            let back = (s + n - m) % n;
            let du = u[s] - u[back];
            spread(&mut diff, back, m, share * (prefix.window(back, m) - du * du));
        }
    }
    // offsets of a period or more: uniform weight, grouped by residue
    let mut dsq = T::zero();
    for r in 1..n {
        let kfar = kp[r] - kn[r] - kn[n - r];
        let sr: T = (0..n).map(|s| (u[s] - u[(s + r) % n]).powi(2)).sum();
        dsq += kfar * sr;
    }
    let far = (table.far_moment() * prefix.total() - hg2 * dsq) / T::of_usize(n);
    undiff(&diff)
        .into_iter()
        .enumerate()
        .map(|(c, v)| v + far - prefix.cell_mass(c))
        .collect()
}

/// Offsets perpendicular to one direction, and torus indexing helpers.
struct PerpGeometry {
    n: usize,
    d: usize,
    dir: usize,
    /// Full coordinates (zero along `dir`) of each perpendicular class.
    offsets: Vec<Vec<usize>>,
}

impl PerpGeometry {
    fn new(n: usize, d: usize, dir: usize) -> Self {
        let axes: Vec<usize> = (0..d).filter(|&k| k != dir).collect();
        let count = n.pow(d as u32 - 1);
        let offsets = (0..count)
            .map(|r| {
                let mut c = vec![0; d];
                let mut rem = r;
                for &ax in axes.iter().rev() {
                    c[ax] = rem % n;
                    rem /= n;
                }
                c
            })
            .collect();
        Self { n, d, dir, offsets }
    }

    fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.n + c % self.n)
    }

    fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        for k in (0..self.d).rev() {
            c[k] = idx % self.n;
            idx /= self.n;
        }
        c
    }

    /// Slice base (coordinate 0 along `dir`) shifted by perpendicular class `r`.
    fn shifted_base(&self, base: &[usize], r: usize) -> usize {
        let c: Vec<usize> = base.iter().zip(&self.offsets[r]).map(|(a, b)| a + b).collect();
        self.index(&c)
    }

    /// Torus offset class with `q` along `dir` and perpendicular class `r`.
    fn class(&self, q: usize, r: usize) -> usize {
        let mut c = self.offsets[r].clone();
        c[self.dir] = q;
        self.index(&c)
    }

    fn bases(&self) -> Vec<usize> {
        (0..self.n.pow(self.d as u32))
            .filter(|&x| self.coords(x)[self.dir] == 0)
            .collect()
    }
}

/// `V` per slice cell (per unit perpendicular measure) and `W_i` at each
/// slice cell, for the slice starting at `base`.
fn slice_cross<T: Real>(
    field: &ScalarField<T>,
    table: &KernelTable<T>,
    geo: &PerpGeometry,
    base: usize,
) -> (Vec<T>, Vec<T>) {
    let n = geo.n;
    let d = geo.d;
    let u = field.values();
    let stride = field.stride(geo.dir);
    let hg = field.params().spacing();
    let kper = table.periodized();
    let half = T::of(0.5);
    let a: Vec<T> = (0..n).map(|s| u[base + s * stride]).collect();
    let base_c = geo.coords(base);
    let mut pair = vec![T::zero(); n * n];
    let mut far = T::zero();
    let mut w = vec![T::zero(); n];
    let mut c = vec![T::zero(); n];
    for r in 1..geo.offsets.len() {
        let other = geo.shifted_base(&base_c, r);
        for s in 0..n {
            c[s] = a[s] - u[other + s * stride];
        }
        for q in 1..n {
            let kq = table.perp_weight(q, r);
            let kt = kper[geo.class(q, r)];
            let kf = half * (kt - kq - table.perp_weight(n - q, r));
            for s in 0..n {
                let e = c[(s + q) % n] - c[s];
                let sq = e * e;
                pair[q * n + s] += kq * sq;
                far += kf * sq;
                w[s] += kt * sq;
            }
        }
    }
    let two_d = T::of_usize(2 * d);
    let coef = hg.powi(d as i32 + 1) / two_d;
    let mut diff = vec![T::zero(); n + 1];
    for q in 1..n {
        let share = coef / T::of_usize(q);
        for s in 0..n {
            spread(&mut diff, s, q, share * pair[q * n + s]);
        }
    }
    let far = coef * far / T::of_usize(n);
    let v = undiff(&diff).into_iter().map(|x| x + far).collect();
    let wcoef = hg.powi(d as i32) / two_d;
    let w = w.into_iter().map(|x| wcoef * x).collect();
    (v, w)
}

fn check_table<T: Real>(field: &ScalarField<T>, table: &KernelTable<T>) -> Result<()> {
    if table.params() != field.params() {
        return Err(param("table", "kernel table built for different parameters"));
    }
    Ok(())
}

/// Cube `Q_l(z)` on the grid: lowest corner and side in cells.
pub fn grid_cube<T: Real>(params: &Params<T>, z: &[T], l: T) -> Result<(Vec<usize>, usize)> {
    let n = params.cells();
    let hg = params.spacing();
    if z.len() != params.d() {
        return Err(param("z", format!("expected {} coordinates", params.d())));
    }
    if !(l > T::zero() && l < params.box_len()) {
        return Err(param("l", format!("need 0 < l < L, got {l}")));
    }
    let k = (l / hg).round();
    if (k * hg - l).abs() > T::of(1e-6) * hg || k < T::one() {
        return Err(param("l", format!("{l} is not a multiple of the grid spacing {hg}")));
    }
    let k = k.to_usize().unwrap();
    let corner = z
        .iter()
        .map(|&zj| {
            let c = (zj / hg - T::of(k as f64 / 2.0)).round().to_i64().unwrap_or(0);
            c.rem_euclid(n as i64) as usize
        })
        .collect();
    Ok((corner, k))
}

fn cube_cells(n: usize, corner: &[usize], k: usize) -> Vec<usize> {
    let d = corner.len();
    (0..k.pow(d as u32))
        .map(|j| {
            let mut rem = j;
            let mut idx = 0;
            let mut mult = 1;
            for ax in (0..d).rev() {
                let c = (corner[ax] + rem % k) % n;
                rem /= k;
                idx += c * mult;
                mult *= n;
            }
            idx
        })
        .collect()
}

/// Periodic box sums of side `k` at every lowest corner.
fn box_sums<T: Real>(vals: &[T], n: usize, d: usize, k: usize) -> Vec<T> {
    let mut cur = vals.to_vec();
    for ax in 0..d {
        let stride = n.pow((d - 1 - ax) as u32);
        let next = (0..cur.len())
            .map(|x| {
                let c = x / stride % n;
                (0..k).map(|j| cur[x - c * stride + (c + j) % n * stride]).sum()
            })
            .collect();
        cur = next;
    }
    cur
}

fn integrate_cells<T: Real>(cells: &[T], hg: T, a: T, b: T) -> T {
    cells
        .iter()
        .enumerate()
        .map(|(c, &v)| {
            let lo = T::of_usize(c) * hg;
            let overlap = (b.min(lo + hg) - a.max(lo)).max(T::zero());
            v * overlap / hg
        })
        .sum()
}

fn check_interval<T: Real>(params: &Params<T>, (a, b): (T, T)) -> Result<()> {
    if !(a >= T::zero() && a <= b && b <= params.box_len()) {
        return Err(param("interval", format!("({a}, {b}) is not inside [0, L)")));
    }
    Ok(())
}

/// `R(u, x_perp, I)` on the slice through `x_perp` along `i`.
pub fn r_term<T: Real>(
    field: &ScalarField<T>,
    i: usize,
    x_perp: usize,
    interval: (T, T),
    table: &KernelTable<T>,
) -> Result<T> {
    check_table(field, table)?;
    check_interval(field.params(), interval)?;
    let prefix = SlicePrefix::new(field, i, x_perp)?;
    let cells = slice_r_cells(&prefix, table);
    Ok(integrate_cells(&cells, prefix.spacing, interval.0, interval.1))
}

/// `V(u, x_perp, I)` on the slice through `x_perp` along `i`.
pub fn v_term<T: Real>(
    field: &ScalarField<T>,
    i: usize,
    x_perp: usize,
    interval: (T, T),
    table: &KernelTable<T>,
) -> Result<T> {
    check_table(field, table)?;
    check_interval(field.params(), interval)?;
    let prefix = SlicePrefix::new(field, i, x_perp)?;
    if field.d() == 1 {
        return Ok(T::zero());
    }
    let geo = PerpGeometry::new(field.cells(), field.d(), i);
    let (v, _) = slice_cross(field, table, &geo, prefix.x_perp);
    Ok(integrate_cells(&v, prefix.spacing, interval.0, interval.1))
}

/// Prefix and `R`, `V` cell values (per unit perpendicular measure) of the
/// slice through `x_perp`.
pub(crate) fn slice_parts<T: Real>(
    field: &ScalarField<T>,
    i: usize,
    x_perp: usize,
    table: &KernelTable<T>,
) -> Result<(SlicePrefix<T>, Vec<T>, Vec<T>)> {
    check_table(field, table)?;
    let prefix = SlicePrefix::new(field, i, x_perp)?;
    let r = slice_r_cells(&prefix, table);
    let v = if field.d() == 1 {
        vec![T::zero(); prefix.cells()]
    } else {
        let geo = PerpGeometry::new(field.cells(), field.d(), i);
        slice_cross(field, table, &geo, prefix.x_perp).0
    };
    Ok((prefix, r, v))
}

/// `W_i` at cell `x`: `(1/2d) sum_y hg^d f_u K(y - x)` over torus offsets.
fn w_density<T: Real>(field: &ScalarField<T>, table: &KernelTable<T>, i: usize, x: usize) -> T {
    let d = field.d();
    if d == 1 {
        return T::zero();
    }
    let n = field.cells();
    let u = field.values();
    let kper = table.periodized();
    let xc = field.coords(x);
    let mut acc = T::zero();
    let mut yc = vec![0; d];
    let mut pc = vec![0; d];
    for (z, &k) in kper.iter().enumerate() {
        let zc = field.coords(z);
        for ax in 0..d {
            yc[ax] = (xc[ax] + zc[ax]) % n;
            pc[ax] = if ax == i { xc[ax] } else { yc[ax] };
        }
        let xi = field.shifted(x, i, zc[i] as isize);
        let y = field.index(&yc);
        let yp = field.index(&pc);
        let e = (u[xi] - u[x]) - (u[y] - u[yp]);
        acc += k * e * e;
    }
    acc * field.params().spacing().powi(d as i32) / T::of_usize(2 * d)
}

/// `int_Q W_i` over the cube `Q_l(z)`.
pub fn w_term<T: Real>(field: &ScalarField<T>, i: usize, cube: (&[T], T), table: &KernelTable<T>) -> Result<T> {
    check_table(field, table)?;
    if i >= field.d() {
        return Err(param("direction", format!("{i} >= d = {}", field.d())));
    }
    let (corner, k) = grid_cube(field.params(), cube.0, cube.1)?;
    let vol = field.params().spacing().powi(field.d() as i32);
    Ok(cube_cells(field.cells(), &corner, k)
        .into_iter()
        .map(|x| vol * w_density(field, table, i, x))
        .sum())
}

/// Flat-cell part of one direction on `Q_l(z)`, divided by `l^d`.
pub fn wcal_term<T: Real>(field: &ScalarField<T>, cube: (&[T], T), table: &KernelTable<T>) -> Result<T> {
    check_table(field, table)?;
    let (corner, k) = grid_cube(field.params(), cube.0, cube.1)?;
    let params = field.params();
    let d = params.d();
    let vol = params.spacing().powi(d as i32);
    let coef = (table.c_tau() - T::one()) / T::of_usize(d);
    let sum: T = cube_cells(params.cells(), &corner, k)
        .into_iter()
        .map(|x| {
            let c = cell_split(field, x);
            if c.flat {
                coef * vol * c.full
            } else {
                T::zero()
            }
        })
        .sum();
    Ok(sum / cube.1.powi(d as i32))
}

/// Per-direction parts of `Fbar_i` on one cube, each already divided by
/// `l^d`, so `fbar[i] = r[i] + v[i] + w[i] + wcal[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeEnergy<T> {
    pub corner: Vec<usize>,
    pub cells: usize,
    pub r: Vec<T>,
    pub v: Vec<T>,
    pub w: Vec<T>,
    pub wcal: Vec<T>,
    pub fbar: Vec<T>,
    pub total: T,
}

/// All cell parts of the decomposition of one field.
#[derive(Clone, Debug)]
pub struct Decomposition<T> {
    params: Params<T>,
    c_tau: T,
    energy: EnergyBreakdown<T>,
    /// Contributions to `L^d F`, indexed `[direction][cell]`.
    r: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    w: Vec<Vec<T>>,
    wcal: Vec<Vec<T>>,
}

impl<T: Real> Decomposition<T> {
    pub fn new(field: &ScalarField<T>, table: &KernelTable<T>, threads: usize) -> Result<Self> {
        check_table(field, table)?;
        let params = field.params().clone();
        let d = params.d();
        let n = params.cells();
        let len = field.len();
        let hg = params.spacing();
        let perp_measure = hg.powi(d as i32 - 1);
        let vol = hg.powi(d as i32);
        let c_tau = table.c_tau();
        let share = (c_tau - T::one()) / T::of_usize(d);

        let splits: Vec<CellSplit<T>> = (0..len).map(|x| cell_split(field, x)).collect();
        let flat: Vec<T> = splits
            .iter()
            .map(|c| if c.flat { share * vol * c.full } else { T::zero() })
            .collect();

        let mut r = vec![vec![T::zero(); len]; d];
        let mut v = vec![vec![T::zero(); len]; d];
        let mut w = vec![vec![T::zero(); len]; d];
        for i in 0..d {
            let geo = PerpGeometry::new(n, d, i);
            let bases = geo.bases();
            let stride = field.stride(i);
            let per_slice = par_map(bases.len(), threads, |b| {
                let prefix = SlicePrefix::new(field, i, bases[b]).expect("valid slice");
                let rc = slice_r_cells(&prefix, table);
                let (vc, wc) = if d > 1 {
                    slice_cross(field, table, &geo, bases[b])
                } else {
                    (vec![T::zero(); n], vec![T::zero(); n])
                };
                (rc, vc, wc)
            });
            for (b, (rc, vc, wc)) in per_slice.into_iter().enumerate() {
                for s in 0..n {
                    let x = bases[b] + s * stride;
                    r[i][x] = perp_measure * rc[s];
                    v[i][x] = perp_measure * vc[s];
                    w[i][x] = vol * wc[s] / T::of_usize(2 * d);
                }
            }
        }
        Ok(Self {
            params,
            c_tau,
            energy: total_energy(field, table),
            r,
            v,
            w,
            wcal: vec![flat; d],
        })
    }

    pub fn energy(&self) -> &EnergyBreakdown<T> {
        &self.energy
    }

    pub fn c_tau(&self) -> T {
        self.c_tau
    }

    /// Cell parts `(r, v, w, wcal)` of direction `i` at cell `x`, as
    /// contributions to `L^d F`.
    pub fn cell(&self, i: usize, x: usize) -> (T, T, T, T) {
        (self.r[i][x], self.v[i][x], self.w[i][x], self.wcal[i][x])
    }

    /// `(1/L^d) sum_i int Fbar_i(Q_l(z)) dz` for cubes of `k` cells, over
    /// every grid position `z`.
    pub fn lower_bound(&self, k: usize) -> T {
        let d = self.params.d();
        let n = self.params.cells();
        let hg = self.params.spacing();
        let l_d = (T::of_usize(k) * hg).powi(d as i32);
        let vol = hg.powi(d as i32);
        let mut acc = T::zero();
        for i in 0..d {
            let dens: Vec<T> = (0..self.r[i].len())
                .map(|x| self.r[i][x] + self.v[i][x] + self.w[i][x] + self.wcal[i][x])
                .collect();
            let sums = box_sums(&dens, n, d, k);
            acc += vol * sums.iter().copied().sum::<T>() / l_d;
        }
        acc / self.params.box_len().powi(d as i32)
    }

    /// Cube with lowest corner `corner` and side `k` cells.
    pub fn cube(&self, corner: &[usize], k: usize) -> CubeEnergy<T> {
        let d = self.params.d();
        let l_d = (T::of_usize(k) * self.params.spacing()).powi(d as i32);
        let cells = cube_cells(self.params.cells(), corner, k);
        let sum = |a: &Vec<T>| cells.iter().map(|&x| a[x]).sum::<T>() / l_d;
        let r: Vec<T> = self.r.iter().map(sum).collect();
        let v: Vec<T> = self.v.iter().map(sum).collect();
        let w: Vec<T> = self.w.iter().map(sum).collect();
        let wcal: Vec<T> = self.wcal.iter().map(sum).collect();
        let fbar: Vec<T> = (0..d).map(|i| r[i] + v[i] + w[i] + wcal[i]).collect();
        let total = fbar.iter().copied().sum();
        CubeEnergy {
            corner: corner.to_vec(),
            cells: k,
            r,
            v,
            w,
            wcal,
            fbar,
            total,
        }
    }
}

/// `Fbar_i(u, Q_l(z))` for every direction, and their sum.
pub fn localized_cube_energy<T: Real>(
    field: &ScalarField<T>,
    z: &[T],
    l: T,
    table: &KernelTable<T>,
) -> Result<CubeEnergy<T>> {
    let (corner, k) = grid_cube(field.params(), z, l)?;
    Ok(Decomposition::new(field, table, 1)?.cube(&corner, k))
}

/// Step sizes and truncations behind a report.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureBudget<T> {
    pub spacing: T,
    pub theta_g: T,
    pub r_cut: T,
    pub lambda: T,
    /// Marginal moment carried by windows of a period or more.
    pub far_moment: T,
    pub truncation_bound: T,
    /// Allowed negative residual (rounding).
    pub tolerance: T,
}

#[derive(Clone, Debug)]
pub struct ReportOptions {
    /// Spacing of the reported cube corners, in cells (0: one cube side).
    pub stride: usize,
    pub threads: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { stride: 0, threads: 1 }
    }
}

#[derive(Clone, Debug)]
pub struct DecompositionReport<T> {
    pub d: usize,
    pub cube_side: T,
    pub cube_cells: usize,
    pub corners: Vec<Vec<usize>>,
    /// `[direction][cube]`, each divided by `l^d`.
    pub r_value: Vec<Vec<T>>,
    pub v_value: Vec<Vec<T>>,
    pub w_value: Vec<Vec<T>>,
    pub wcal_value: Vec<Vec<T>>,
    pub fbar: Vec<Vec<T>>,
    pub energy: T,
    pub lower_bound: T,
    pub lower_bound_residual: T,
    pub c_tau: T,
    /// The flat-cell part is nonpositive when `C_tau <= 1`.
    pub c_tau_at_most_one: bool,
    pub budget: QuadratureBudget<T>,
}

impl<T: Real> DecompositionReport<T> {
    pub fn holds(&self) -> bool {
        self.lower_bound_residual >= -self.budget.tolerance
    }

    pub fn min_v(&self) -> T {
        self.v_value.iter().flatten().fold(T::infinity(), |a, &b| a.min(b))
    }

    pub fn min_w(&self) -> T {
        self.w_value.iter().flatten().fold(T::infinity(), |a, &b| a.min(b))
    }

    /// One row per cube and direction.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction,cube");
        for k in 0..self.d {
            let _ = write!(out, ",corner_{k}");
        }
        out.push_str(",r,v,w,wcal,fbar\n");
        for i in 0..self.d {
            for (c, corner) in self.corners.iter().enumerate() {
                let _ = write!(out, "{i},{c}");
                for x in corner {
                    let _ = write!(out, ",{x}");
                }
                let _ = writeln!(
                    out,
                    ",{:e},{:e},{:e},{:e},{:e}",
                    self.r_value[i][c], self.v_value[i][c], self.w_value[i][c], self.wcal_value[i][c], self.fbar[i][c]
                );
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let b = &self.budget;
        let mut s = String::new();
        let _ = writeln!(s, "energy: {:e}", self.energy);
        let _ = writeln!(s, "lower_bound: {:e}", self.lower_bound);
        let _ = writeln!(s, "residual: {:e}", self.lower_bound_residual);
        let _ = writeln!(s, "tolerance: {:e}", b.tolerance);
        let _ = writeln!(s, "holds: {}", self.holds());
        let _ = writeln!(s, "cube_side: {}", self.cube_side);
        let _ = writeln!(s, "cubes: {}", self.corners.len());
        let _ = writeln!(s, "min_v: {:e}", self.min_v());
        let _ = writeln!(s, "min_w: {:e}", self.min_w());
        let _ = writeln!(s, "c_tau: {}", self.c_tau);
        if self.c_tau_at_most_one {
            let _ = writeln!(s, "warning: C_tau <= 1, flat-cell term is not a penalty");
        }
        let _ = writeln!(s, "spacing: {}", b.spacing);
        let _ = writeln!(s, "theta_g: {:e}", b.theta_g);
        let _ = writeln!(s, "r_cut: {}", b.r_cut);
        let _ = writeln!(s, "lambda: {}", b.lambda);
        let _ = writeln!(s, "far_moment: {:e}", b.far_moment);
        let _ = writeln!(s, "truncation_bound: {:e}", b.truncation_bound);
        s
    }

    /// Writes `decomposition.csv` and `decomposition.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("decomposition.csv"), self.to_csv())?;
        std::fs::write(dir.join("decomposition.txt"), self.summary())?;
        Ok(())
    }
}

pub fn lower_bound_report<T: Real>(
    field: &ScalarField<T>,
    l: T,
    table: &KernelTable<T>,
) -> Result<DecompositionReport<T>> {
    lower_bound_report_with(field, l, table, &ReportOptions::default())
}

pub fn lower_bound_report_with<T: Real>(
    field: &ScalarField<T>,
    l: T,
    table: &KernelTable<T>,
    opts: &ReportOptions,
) -> Result<DecompositionReport<T>> {
    let params = field.params();
    let d = params.d();
    let n = params.cells();
    let origin = vec![T::zero(); d];
    let (_, k) = grid_cube(params, &origin, l)?;
    let dec = Decomposition::new(field, table, opts.threads)?;
    let stride = if opts.stride == 0 { k } else { opts.stride };
    let per_axis: Vec<usize> = (0..n).step_by(stride).collect();
    let corners: Vec<Vec<usize>> = (0..per_axis.len().pow(d as u32))
        .map(|j| {
            let mut rem = j;
            let mut c = vec![0; d];
            for ax in (0..d).rev() {
                c[ax] = per_axis[rem % per_axis.len()];
                rem /= per_axis.len();
            }
            c
        })
        .collect();
    let mut r_value = vec![Vec::new(); d];
    let mut v_value = vec![Vec::new(); d];
    let mut w_value = vec![Vec::new(); d];
    let mut wcal_value = vec![Vec::new(); d];
    let mut fbar = vec![Vec::new(); d];
    for c in &corners {
        let q = dec.cube(c, k);
        for i in 0..d {
            r_value[i].push(q.r[i]);
            v_value[i].push(q.v[i]);
            w_value[i].push(q.w[i]);
            wcal_value[i].push(q.wcal[i]);
            fbar[i].push(q.fbar[i]);
        }
    }
    let energy = dec.energy().total;
    let lower_bound = dec.lower_bound(k);
    let e = dec.energy();
    let scale = e.mm_term.abs() + e.nonlocal_term.abs();
    let tolerance = T::epsilon() * T::of(1e3) * T::of_usize(n) * (scale + T::epsilon());
    Ok(DecompositionReport {
        d,
        cube_side: T::of_usize(k) * params.spacing(),
        cube_cells: k,
        corners,
        r_value,
        v_value,
        w_value,
        wcal_value,
        fbar,
        energy,
        lower_bound,
        lower_bound_residual: energy - lower_bound,
        c_tau: table.c_tau(),
        c_tau_at_most_one: table.c_tau() <= T::one(),
        budget: QuadratureBudget {
            spacing: params.spacing(),
            theta_g: params.theta_g(),
            r_cut: table.r_cut(),
            lambda: table.lambda(),
            far_moment: table.far_moment(),
            truncation_bound: table.truncation_bound(),
            tolerance,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::modica_mortola;
    use crate::{make_random_field, make_stripe_field};
    use proptest::prelude::*;

    fn setup(d: usize, p: f64, tau: f64, l: f64, n: f64) -> (Params<f64>, KernelTable<f64>) {
        let prm = Params::new(d, p, tau, 0.2, l, n).unwrap();
        let t = KernelTable::new(&prm).unwrap();
        (prm, t)
    }

    fn smooth_random(prm: &Params<f64>, seed: u64) -> ScalarField<f64> {
        let phase = seed as f64;
        ScalarField::from_fn(prm.clone(), |x| {
            let s: f64 = x.iter().enumerate().map(|(k, &v)| (k as f64 + 1.3) * v).sum();
            0.5 + 0.3 * (2.7 * s + phase).sin() + 0.15 * (5.1 * x[0] - 1.7 * phase).cos()
        })
    }

    #[test]
    fn omega_values() {
        assert_eq!(omega(0.0), 0.0);
        assert_eq!(omega(1.0), 1.0);
        assert_eq!(omega(0.5), 0.5);
    }

    #[test]
    fn slice_prefix_queries() {
        let (prm, _) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let f = smooth_random(&prm, 3);
        let sp = SlicePrefix::new(&f, 1, f.index(&[5, 7])).unwrap();
        assert_eq!(sp.x_perp, f.index(&[5, 0]));
        let hg = prm.spacing();
        // direct sum of the slice densities
        let direct: f64 = (0..16)
            .map(|s| {
                let c = cell_split(&f, f.index(&[5, s]));
                if c.flat {
                    0.0
                } else {
                    hg * c.directional[1]
                }
            })
            .sum();
        assert!((sp.total() - direct).abs() < 1e-12 * direct);
        let (a, b, c) = (0.13, 0.77, 2.9);
        let lhs = interval_mm(&sp, a, c);
        let rhs = interval_mm(&sp, a, b) + interval_mm(&sp, b, c);
        assert!((lhs - rhs).abs() < 1e-13 * lhs);
        assert!((interval_mm(&sp, 0.0, 1.6) - sp.total()).abs() < 1e-14);
        assert!((sp.window(3, 20) - (sp.total() + sp.window(3, 4))).abs() < 1e-13);

        let zero = ScalarField::constant(prm.clone(), 0.3).unwrap();
        let sp = SlicePrefix::new(&zero, 0, 0).unwrap();
        assert_eq!(interval_mm(&sp, 0.0, 1.6), 0.0);
    }

    #[test]
    fn slice_pair_terms_are_nonnegative() {
        let (prm, _) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let f = make_random_field(&prm, 11, 0.1).unwrap();
        for base in [0, 3, 7] {
            let sp = SlicePrefix::new(&f, 0, base).unwrap();
            for s in 0..16 {
                for m in 1..40 {
                    let du = sp.values[s] - sp.values[(s + m) % 16];
                    assert!(sp.window(s, m) - du * du >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn terms_sum_to_the_expected_totals() {
        let (prm, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let f = smooth_random(&prm, 1);
        let dec = Decomposition::new(&f, &t, 2).unwrap();
        let single = Decomposition::new(&f, &t, 1).unwrap();
        assert_eq!(dec.r, single.r);
        let n = prm.cells();
        let hg = prm.spacing();
        let mm = modica_mortola(&f, prm.alpha());
        let c = t.c_tau();
        // sum over directions of R plus flat parts gives (C-1) MM minus slice interactions
        let mut slice_nl = 0.0;
        let kp = t.marginal_periodized();
        for x in 0..f.len() {
            for i in 0..2 {
                for r in 1..n {
                    let du = f.values()[x] - f.values()[f.shifted(x, i, r as isize)];
                    slice_nl += hg.powi(3) * kp[r] * du * du;
                }
            }
        }
        let r_total: f64 = (0..2).flat_map(|i| dec.r[i].iter()).sum::<f64>()
            + (0..2).flat_map(|i| dec.wcal[i].iter()).sum::<f64>();
        assert!((r_total - ((c - 1.0) * mm - slice_nl)).abs() < 1e-10 * mm.abs().max(1.0));
    }

    #[test]
    fn lower_bound_holds_on_random_fields() {
        let (prm, t) = setup(2, 4.0, 0.3, 1.6, 10.0);
        for seed in 0..4 {
            let f = make_random_field(&prm, seed, 0.2).unwrap();
            let rep = lower_bound_report(&f, 0.4, &t).unwrap();
            assert!(rep.holds(), "seed {seed}: {}", rep.summary());
            assert!(rep.lower_bound_residual > 0.0);
            assert!(rep.min_v() >= 0.0 && rep.min_w() >= 0.0);
        }
    }

    #[test]
    fn one_dimensional_fields_are_tight() {
        let (prm, t) = setup(1, 3.0, 0.8, 2.0, 16.0);
        let f = smooth_random(&prm, 2);
        let rep = lower_bound_report(&f, 0.5, &t).unwrap();
        assert!(rep.lower_bound_residual.abs() < 1e-12, "{}", rep.summary());

        let (prm, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let f = make_stripe_field(&prm, 0, 0.4, 0.1).unwrap();
        let rep = lower_bound_report(&f, 0.4, &t).unwrap();
        assert!(rep.lower_bound_residual.abs() < 1e-11, "{}", rep.summary());
        assert_eq!(rep.min_v(), 0.0);
        assert_eq!(rep.min_w(), 0.0);
    }

    #[test]
    fn zero_field_has_zero_residual() {
        let (prm, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let f = ScalarField::constant(prm, 0.0).unwrap();
        let rep = lower_bound_report(&f, 0.4, &t).unwrap();
        assert_eq!(rep.lower_bound_residual, 0.0);
        assert!(rep.fbar.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn cube_energy_is_the_sum_of_its_parts() {
        let (prm, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let f = smooth_random(&prm, 5);
        let z = [0.55, 0.95];
        let q = localized_cube_energy(&f, &z, 0.4, &t).unwrap();
        let hg = prm.spacing();
        let corner = q.corner.clone();
        for i in 0..2 {
            let x0 = f.index(&corner);
            let r: f64 = (0..4)
                .map(|a| {
                    let x = f.shifted(x0, 1 - i, a);
                    r_term(&f, i, x, (corner[i] as f64 * hg, corner[i] as f64 * hg + 0.4), &t).unwrap() * hg
                })
                .sum();
            let v: f64 = (0..4)
                .map(|a| {
                    let x = f.shifted(x0, 1 - i, a);
                    v_term(&f, i, x, (corner[i] as f64 * hg, corner[i] as f64 * hg + 0.4), &t).unwrap() * hg
                })
                .sum();
            let w = w_term(&f, i, (&z, 0.4), &t).unwrap();
            let wc = wcal_term(&f, (&z, 0.4), &t).unwrap();
            let l2 = 0.16;
            let expect = (r + v) / l2 + w / (4.0 * l2) + wc;
            assert!((q.fbar[i] - expect).abs() < 1e-10, "{} vs {expect}", q.fbar[i]);
            assert!((q.fbar[i] - (q.r[i] + q.v[i] + q.w[i] + q.wcal[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_cell_term() {
        // C_tau = 1 for d = 1, p = 3, tau = 1
        let prm = Params::<f64>::new(1, 3.0, 1.0, 0.2, 1.0, 8.0).unwrap();
        let t = KernelTable::new(&prm).unwrap();
        let half = ScalarField::constant(prm.clone(), 0.5).unwrap();
        assert!(wcal_term(&half, (&[0.5], 0.5), &t).unwrap().abs() < 1e-12);

        let prm = Params::<f64>::new(1, 4.0, 1.0, 0.2, 1.0, 8.0).unwrap();
        let t = KernelTable::new(&prm).unwrap();
        let half = ScalarField::constant(prm.clone(), 0.5).unwrap();
        let expect = 3.0 * (1.0 / 3.0 - 1.0) / prm.alpha() / 16.0;
        assert!((wcal_term(&half, (&[0.5], 0.5), &t).unwrap() - expect).abs() < 1e-12);
        let rep = lower_bound_report(&half, 0.5, &t).unwrap();
        assert!(rep.c_tau_at_most_one);
    }

    #[test]
    fn rejects_bad_intervals_and_cubes() {
        let (prm, t) = setup(2, 4.0, 0.5, 1.6, 10.0);
        let f = smooth_random(&prm, 0);
        assert!(r_term(&f, 0, 0, (-0.1, 0.5), &t).is_err());
        assert!(v_term(&f, 0, 0, (0.5, 1.7), &t).is_err());
        assert!(localized_cube_energy(&f, &[0.0, 0.0], 1.6, &t).is_err());
        assert!(localized_cube_energy(&f, &[0.0, 0.0], 0.45, &t).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn residual_is_nonnegative(seed in 0u64..1000, amp in 0.0f64..0.5) {
            let (prm, t) = setup(2, 4.0, 0.4, 1.2, 10.0);
            let f = make_random_field(&prm, seed, 0.1 + amp).unwrap();
            let rep = lower_bound_report(&f, 0.3, &t).unwrap();
            prop_assert!(rep.holds());
        }
    }
}
