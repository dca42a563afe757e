//! Distance of a field from unions of stripes, and cube classification.
//!
//! On a cube the best union of stripes orthogonal to `e_i` only sees the
//! profile of `u` averaged over the perpendicular section, because
//! `|u - chi| = chi (1 - u) + (1 - chi) u` for `u` in `[0,1]`. The optimum
//! over grid-aligned transitions with gaps of at least `eta` is found by
//! dynamic programming. The empty union and the whole space (no transitions)
//! are admissible.

use crate::decompose::grid_cube;
use crate::error::{param, Result};
use crate::par::par_map;
use crate::{Real, ScalarField};
use std::fmt::Write as _;

/// Best union of stripes orthogonal to `e_direction` on one cube.
#[derive(Clone, Debug, PartialEq)]
pub struct StripeFit<T> {
    pub direction: usize,
    pub eta: T,
    /// Fitted boundaries, as positions from the low face of the cube.
    pub transitions: Vec<T>,
    /// Whether the fitted set contains the first cube layer.
    pub starts_inside: bool,
    /// `(1/|Q|) int_Q |u - chi_F|`.
    pub distance: T,
    pub admissible: bool,
}

/// Mean of `u` over each perpendicular layer of the cube.
pub fn section_profile<T: Real>(field: &ScalarField<T>, i: usize, corner: &[usize], k: usize) -> Vec<T> {
    let d = field.d();
    let n = field.cells();
    let layer = k.pow(d as u32 - 1);
    let mut coords = vec![0; d];
    (0..k)
        .map(|s| {
            let mut acc = T::zero();
            for j in 0..layer {
                let mut rem = j;
                for ax in (0..d).rev() {
                    let off = if ax == i {
                        s
                    } else {
                        let o = rem % k;
                        rem /= k;
                        o
                    };
                    coords[ax] = (corner[ax] + off) % n;
                }
                acc += field.values()[field.index(&coords)];
            }
            acc / T::of_usize(layer)
        })
        .collect()
}

/// Minimal gap in cells for separation `eta`.
fn gap_cells<T: Real>(eta: T, hg: T) -> usize {
    (eta / hg - T::of(1e-9)).ceil().to_usize().unwrap_or(1).max(1)
}

/// Optimal binary fit of a profile with transitions at least `gap` layers
/// apart: `(cost, starts_inside, transition layer indices)`.
pub fn fit_profile<T: Real>(profile: &[T], gap: usize) -> (T, bool, Vec<usize>) {
    let k = profile.len();
    let states = 2 * (gap + 1);
    // state (b, r): current value b, r = layers since the last transition
    // capped at gap; r = gap also stands for "no transition yet"
    let idx = |b: usize, r: usize| b * (gap + 1) + r;
    let inf = T::infinity();
    let mut cost = vec![inf; states];
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(k);
    let layer_cost = |b: usize, m: T| if b == 1 { T::one() - m } else { m };
    cost[idx(0, gap)] = layer_cost(0, profile[0]);
    cost[idx(1, gap)] = layer_cost(1, profile[0]);
    back.push(vec![usize::MAX; states]);
    for &m in &profile[1..] {
        let mut next = vec![inf; states];
        let mut from = vec![usize::MAX; states];
        for b in 0..2 {
            for r in 0..=gap {
                let c = cost[idx(b, r)];
                if c == inf {
                    continue;
                }
                // stay
                let r2 = (r + 1).min(gap);
                let v = c + layer_cost(b, m);
                if v < next[idx(b, r2)] {
                    next[idx(b, r2)] = v;
                    from[idx(b, r2)] = idx(b, r);
                }
                // switch
                if r == gap {
                    let nb = 1 - b;
                    let r2 = 1.min(gap);
                    let v = c + layer_cost(nb, m);
                    if v < next[idx(nb, r2)] {
                        next[idx(nb, r2)] = v;
                        from[idx(nb, r2)] = idx(b, r);
                    }
                }
            }
        }
        cost = next;
        back.push(from);
    }
    let (mut best, mut state) = (inf, 0);
    for (s, &c) in cost.iter().enumerate() {
        if c < best {
            best = c;
            state = s;
        }
    }
    let mut transitions = Vec::new();
    let mut b_cur = state / (gap + 1);
    for layer in (1..k).rev() {
        let prev = back[layer][state];
        let b_prev = prev / (gap + 1);
        if b_prev != b_cur {
            transitions.push(layer);
        }
        state = prev;
        b_cur = b_prev;
    }
    transitions.reverse();
    (best, b_cur == 1, transitions)
}

/// `D^i_eta(u, Q_l(z))` with the fitted set.
pub fn stripe_fit_distance<T: Real>(field: &ScalarField<T>, i: usize, cube: (&[T], T), eta: T) -> Result<StripeFit<T>> {
    let params = field.params();
    if i >= field.d() {
        return Err(param("direction", format!("{i} >= d = {}", field.d())));
    }
    let hg = params.spacing();
    if !(eta >= hg * (T::one() - T::of(1e-9))) {
        return Err(param("eta", format!("{eta} is below the grid spacing {hg}")));
    }
    let (corner, k) = grid_cube(params, cube.0, cube.1)?;
    Ok(fit_on_cube(field, i, &corner, k, eta))
}

fn fit_on_cube<T: Real>(field: &ScalarField<T>, i: usize, corner: &[usize], k: usize, eta: T) -> StripeFit<T> {
    let hg = field.params().spacing();
    let gap = gap_cells(eta, hg);
    let profile = section_profile(field, i, corner, k);
    let (cost, starts_inside, layers) = fit_profile(&profile, gap);
    let admissible = layers.windows(2).all(|w| w[1] - w[0] >= gap);
    StripeFit {
        direction: i,
        eta,
        transitions: layers.iter().map(|&c| T::of_usize(c) * hg).collect(),
        starts_inside,
        distance: (cost / T::of_usize(k)).max(T::zero()),
        admissible,
    }
}

/// `D_eta(u, Q) = min_i D^i_eta(u, Q)` and the minimizing axis (lowest on ties).
pub fn direction_distance<T: Real>(field: &ScalarField<T>, cube: (&[T], T), eta: T) -> Result<(T, usize)> {
    let mut best = (T::infinity(), 0);
    for i in 0..field.d() {
        let f = stripe_fit_distance(field, i, cube, eta)?;
        if f.distance < best.0 {
            best = (f.distance, i);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeLabel {
    /// Two or more directions within `sigma` (`A_-1`).
    Ambiguous,
    /// No direction within `sigma` (`A_0`).
    Unoriented,
    /// Exactly this axis within `sigma` (`A_{axis+1}`).
    Oriented(usize),
}

impl CubeLabel {
    fn from_distances<T: Real>(dist: &[T], sigma: T) -> Self {
        let close: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] <= sigma).collect();
        match close.len() {
            0 => Self::Unoriented,
            1 => Self::Oriented(close[0]),
            _ => Self::Ambiguous,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Ambiguous => "A-1".into(),
            Self::Unoriented => "A0".into(),
            Self::Oriented(i) => format!("A{}", i + 1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CubeClassification<T> {
    pub centers: Vec<Vec<T>>,
    /// `[cube][direction]`.
    pub distances: Vec<Vec<T>>,
    pub labels: Vec<CubeLabel>,
    pub sigma: T,
    pub eta: T,
    pub cube_side: T,
}

impl<T: Real> CubeClassification<T> {
    pub fn count(&self, label: CubeLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn to_csv(&self) -> String {
        let d = self.centers.first().map_or(0, |c| c.len());
        let mut out = String::new();
        for k in 0..d {
            let _ = write!(out, "z_{k},");
        }
        for k in 0..d {
            let _ = write!(out, "d_{k},");
        }
        out.push_str("label\n");
        for ((z, dist), label) in self.centers.iter().zip(&self.distances).zip(&self.labels) {
            for v in z {
                let _ = write!(out, "{v},");
            }
            for v in dist {
                let _ = write!(out, "{v:e},");
            }
            let _ = writeln!(out, "{}", label.name());
        }
        out
    }

    pub fn summary(&self) -> String {
        let d = self.centers.first().map_or(0, |c| c.len());
        let mut s = String::new();
        let _ = writeln!(s, "cubes: {}", self.labels.len());
        let _ = writeln!(s, "cube_side: {}", self.cube_side);
        let _ = writeln!(s, "eta: {}", self.eta);
        let _ = writeln!(s, "sigma: {}", self.sigma);
        let _ = writeln!(s, "A-1: {}", self.count(CubeLabel::Ambiguous));
        let _ = writeln!(s, "A0: {}", self.count(CubeLabel::Unoriented));
        for i in 0..d {
            let _ = writeln!(s, "A{}: {}", i + 1, self.count(CubeLabel::Oriented(i)));
        }
        s
    }
}

/// Labels cubes `Q_l(z)` with centers on a grid of spacing `stride`.
pub fn classify_cubes<T: Real>(
    field: &ScalarField<T>,
    l: T,
    eta: T,
    sigma: T,
    stride: T,
) -> Result<CubeClassification<T>> {
    classify_cubes_threaded(field, l, eta, sigma, stride, 1)
}

pub fn classify_cubes_threaded<T: Real>(
    field: &ScalarField<T>,
    l: T,
    eta: T,
    sigma: T,
    stride: T,
    threads: usize,
) -> Result<CubeClassification<T>> {
    let params = field.params();
    let d = params.d();
    let n = params.cells();
    let hg = params.spacing();
    if !(stride >= hg * (T::one() - T::of(1e-9))) {
        return Err(param("stride", format!("{stride} is below the grid spacing {hg}")));
    }
    if !(eta >= hg * (T::one() - T::of(1e-9))) {
        return Err(param("eta", format!("{eta} is below the grid spacing {hg}")));
    }
    let step = (stride / hg).round().to_usize().unwrap_or(1).max(1);
    let (_, k) = grid_cube(params, &vec![T::zero(); d], l)?;
    let axis: Vec<usize> = (0..n).step_by(step).collect();
    let count = axis.len().pow(d as u32);
    let half = T::of(k as f64 / 2.0);
    let rows = par_map(count, threads, |j| {
        let mut rem = j;
        let mut corner = vec![0; d];
        for ax in (0..d).rev() {
            corner[ax] = axis[rem % axis.len()];
            rem /= axis.len();
        }
        let center: Vec<T> = corner.iter().map(|&c| (T::of_usize(c) + half) * hg).collect();
        let dist: Vec<T> = (0..d).map(|i| fit_on_cube(field, i, &corner, k, eta).distance).collect();
        (center, dist)
    });
    let mut centers = Vec::with_capacity(count);
    let mut distances = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (c, dist) in rows {
        labels.push(CubeLabel::from_distances(&dist, sigma));
        centers.push(c);
        distances.push(dist);
    }
    Ok(CubeClassification {
        centers,
        distances,
        labels,
        sigma,
        eta,
        cube_side: T::of_usize(k) * hg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{make_stripe_field, Params};
    use proptest::prelude::*;

    fn prm(d: usize, l: f64, n: f64) -> Params<f64> {
        Params::new(d, 4.0, 0.5, 0.1, l, n).unwrap()
    }

    /// All admissible placements of transitions between layers.
    fn brute_force(profile: &[f64], gap: usize) -> f64 {
        let k = profile.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << (k - 1)) {
            let layers: Vec<usize> = (1..k).filter(|&c| mask >> (c - 1) & 1 == 1).collect();
            if layers.windows(2).any(|w| w[1] - w[0] < gap) {
                continue;
            }
            for start in 0..2 {
                let mut b = start;
                let mut cost = 0.0;
                for (c, &m) in profile.iter().enumerate() {
                    if layers.contains(&c) {
                        b = 1 - b;
                    }
                    cost += if b == 1 { 1.0 - m } else { m };
                }
                best = best.min(cost);
            }
        }
        best
    }

    #[test]
    fn exact_stripes_have_zero_distance() {
        let p = prm(2, 3.2, 10.0);
        let f = make_stripe_field(&p, 1, 0.4, 0.0).unwrap();
        let (d, axis) = direction_distance(&f, (&[1.0, 1.0], 1.6), 0.4).unwrap();
        assert_eq!((d, axis), (0.0, 1));
        let fit = stripe_fit_distance(&f, 1, (&[1.0, 1.0], 1.6), 0.3).unwrap();
        assert!(fit.admissible);
        assert_eq!(fit.transitions.len(), 4);
        for w in fit.transitions.windows(2) {
            assert!((w[1] - w[0] - 0.4).abs() < 1e-12);
        }
        let other = stripe_fit_distance(&f, 0, (&[1.0, 1.0], 1.6), 0.4).unwrap();
        assert!((other.distance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_fields() {
        let p = prm(2, 1.6, 10.0);
        let half = ScalarField::constant(p.clone(), 0.5).unwrap();
        let fit = stripe_fit_distance(&half, 0, (&[0.8, 0.8], 0.8), 0.2).unwrap();
        assert_eq!(fit.distance, 0.5);
        let zero = ScalarField::constant(p.clone(), 0.0).unwrap();
        assert_eq!(direction_distance(&zero, (&[0.8, 0.8], 0.8), 0.2).unwrap(), (0.0, 0));
        let cls = classify_cubes(&zero, 0.4, 0.2, 0.05, 0.2).unwrap();
        assert_eq!(cls.count(CubeLabel::Ambiguous), cls.labels.len());
    }

    #[test]
    fn rejects_unresolvable_eta() {
        let p = prm(2, 1.6, 10.0);
        let f = ScalarField::constant(p, 0.5).unwrap();
        assert!(stripe_fit_distance(&f, 0, (&[0.8, 0.8], 0.8), 0.05).is_err());
    }

    #[test]
    fn dynamic_program_matches_enumeration() {
        let p = prm(1, 3.2, 10.0);
        let f = ScalarField::from_fn(p.clone(), |x| {
            let base = if (x[0] / 0.5).floor() as i64 % 2 == 0 { 0.9 } else { 0.1 };
            (base + 0.15 * (7.3 * x[0]).sin()).clamp(0.0, 1.0)
        });
        for corner in [0, 5, 11] {
            let profile = section_profile(&f, 0, &[corner], 16);
            for gap in 1..6 {
                let (cost, _, layers) = fit_profile(&profile, gap);
                let oracle = brute_force(&profile, gap);
                assert!((cost - oracle).abs() < 1e-12, "gap {gap}: {cost} vs {oracle}");
                assert!(layers.windows(2).all(|w| w[1] - w[0] >= gap));
            }
        }
    }

    #[test]
    fn glued_patches_show_both_orientations() {
        let p = prm(2, 3.2, 10.0);
        let f = ScalarField::from_fn(p.clone(), |x| {
            let axis = if x[0] < 1.6 { 0 } else { 1 };
            if (x[axis] / 0.4).floor() as i64 % 2 == 0 {
                1.0
            } else {
                0.0
            }
        });
        let cls = classify_cubes(&f, 0.8, 0.3, 0.05, 0.2).unwrap();
        assert!(cls.count(CubeLabel::Oriented(0)) > 0);
        assert!(cls.count(CubeLabel::Oriented(1)) > 0);
        let band = cls.labels.iter().filter(|l| !matches!(l, CubeLabel::Oriented(_))).count();
        assert!(band > 0);
        let csv = cls.to_csv();
        assert!(csv.starts_with("z_0,z_1,d_0,d_1,label\n"));
        assert_eq!(csv.lines().count(), cls.labels.len() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fit_is_bounded_and_admissible(vals in proptest::collection::vec(0.0f64..1.0, 12), gap in 1usize..5) {
            let (cost, _, layers) = fit_profile(&vals, gap);
            let k = vals.len() as f64;
            prop_assert!(cost >= 0.0 && cost / k <= 0.5 + 1e-12);
            prop_assert!(layers.windows(2).all(|w| w[1] - w[0] >= gap));
            prop_assert!((cost - brute_force(&vals, gap)).abs() < 1e-12);
        }
    }
}
