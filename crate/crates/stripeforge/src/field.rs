use crate::error::{param, Error, Result};
use crate::{Params, Real};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Periodic grid function on `[0,L)^d` with values in `[0,1]`, stored
/// row-major at cell centers (axis 0 slowest).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    params: Params<T>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(params: Params<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != params.len() {
            return Err(Error::Field(format!(
                "expected {} samples for d={} N={}, got {}",
                params.len(),
                params.d(),
                params.cells(),
                values.len()
            )));
        }
        if let Some(k) = values
            .iter()
            .position(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::Field(format!(
                "sample {k} = {} outside [0,1]",
                values[k]
            )));
        }
        Ok(Self { params, values })
    }

    pub fn constant(params: Params<T>, value: T) -> Result<Self> {
        let n = params.len();
        Self::new(params, vec![value; n])
    }

    /// Builds a field from a function of the cell-center coordinates;
    /// values are clamped to `[0,1]`.
    pub fn from_fn(params: Params<T>, f: impl Fn(&[T]) -> T) -> Self {
        let d = params.d();
        let n = params.cells();
        let hg = params.spacing();
        let half = T::of(0.5);
        let mut x = vec![T::zero(); d];
        let mut values = Vec::with_capacity(params.len());
        for idx in 0..params.len() {
            let mut rem = idx;
            for k in (0..d).rev() {
                x[k] = (T::of_usize(rem % n) + half) * hg;
                rem /= n;
            }
            values.push(clamp01(f(&x)));
        }
        Self { params, values }
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn into_values(self) -> Vec<T> {
        self.values
    }
    pub fn d(&self) -> usize {
        self.params.d()
    }
    pub fn cells(&self) -> usize {
        self.params.cells()
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear-index stride of an axis.
    pub fn stride(&self, axis: usize) -> usize {
        self.cells().pow((self.d() - 1 - axis) as u32)
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        let n = self.cells();
        let mut c = vec![0; self.d()];
        let mut rem = idx;
        for k in (0..self.d()).rev() {
            c[k] = rem % n;
            rem /= n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        let n = self.cells();
        coords.iter().fold(0, |acc, &c| acc * n + c % n)
    }

    /// Index of `idx` moved by `k` cells along `axis`, wrapping.
    #[inline]
    pub fn shifted(&self, idx: usize, axis: usize, k: isize) -> usize {
        let n = self.cells();
        let s = self.stride(axis);
        let c = (idx / s) % n;
        let nc = (c as isize + k).rem_euclid(n as isize) as usize;
        idx - c * s + nc * s
    }

    /// Copy with samples cyclically shifted by `k` cells along `axis`.
    pub fn rolled(&self, axis: usize, k: isize) -> Self {
        let mut values = vec![T::zero(); self.len()];
        for (i, v) in values.iter_mut().enumerate() {
            *v = self.values[self.shifted(i, axis, -k)];
        }
        Self {
            params: self.params.clone(),
            values,
        }
    }

    /// Copy with `u -> 1 - u`.
    pub fn swapped(&self) -> Self {
        Self {
            params: self.params.clone(),
            values: self.values.iter().map(|&v| T::one() - v).collect(),
        }
    }

    /// Copy with two axes exchanged.
    pub fn transposed(&self, a: usize, b: usize) -> Self {
        let mut values = vec![T::zero(); self.len()];
        for (i, v) in values.iter_mut().enumerate() {
            let mut c = self.coords(i);
            c.swap(a, b);
            *v = self.values[self.index(&c)];
        }
        Self {
            params: self.params.clone(),
            values,
        }
    }

    /// Values along the line through `idx` in direction `axis`, starting at
    /// coordinate 0.
    pub fn slice(&self, axis: usize, idx: usize) -> Vec<T> {
        let n = self.cells();
        let s = self.stride(axis);
        let base = idx - ((idx / s) % n) * s;
        (0..n).map(|k| self.values[base + k * s]).collect()
    }

    /// Same params in another scalar type.
    pub fn cast<U: Real>(&self) -> ScalarField<U> {
        ScalarField {
            params: self.params.cast(),
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

#[inline]
pub(crate) fn clamp01<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Alternating slabs of width `half_period` orthogonal to `axis`: `u = 1` on
/// `[phase + 2kh, phase + (2k+1)h)`, `0` elsewhere.
pub fn make_stripe_field<T: Real>(
    params: &Params<T>,
    axis: usize,
    half_period: T,
    phase: T,
) -> Result<ScalarField<T>> {
    if axis >= params.d() {
        return Err(param("direction", format!("axis {axis} out of range for d={}", params.d())));
    }
    let hg = params.spacing().f64();
    let h = half_period.f64();
    let cells_h = h / hg;
    let periods = params.box_len().f64() / (2.0 * h);
    if !(h > 0.0)
        || (cells_h - cells_h.round()).abs() > 1e-9 * cells_h.max(1.0)
        || cells_h.round() < 1.0
        || (periods - periods.round()).abs() > 1e-9 * periods.max(1.0)
        || periods.round() < 1.0
    {
        return Err(param(
            "half_period",
            format!(
                "h = {h} must be a whole number of cells (spacing {hg}) and 2h must divide L = {}",
                params.box_len()
            ),
        ));
    }
    let ph = phase.f64();
    Ok(ScalarField::from_fn(params.clone(), |x| {
        let k = ((x[axis].f64() - ph) / h).floor() as i64;
        if k.rem_euclid(2) == 0 {
            T::one()
        } else {
            T::zero()
        }
    }))
}

/// Periodic Gaussian smoothing of uniform white noise at length scale
/// `smoothness`, standardized and mapped to `0.5 + 0.35 z`, then clipped.
pub fn make_random_field<T: Real>(
    params: &Params<T>,
    seed: u64,
    smoothness: T,
) -> Result<ScalarField<T>> {
    let hg = params.spacing().f64();
    let sm = smoothness.f64();
    if !(sm >= hg * (1.0 - 1e-12)) {
        return Err(param(
            "smoothness",
            format!("smoothness {sm} below grid spacing {hg}"),
        ));
    }
    let n = params.cells();
    let d = params.d();
    let total = params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<f64> = (0..total).map(|_| rng.random_range(-1.0..1.0)).collect();

    let sigma = sm / hg;
    let reach = ((4.0 * sigma).ceil() as usize).min(n / 2).max(1);
    let mut taps = vec![0.0f64; n];
    for j in -(reach as isize)..=(reach as isize) {
        let w = (-0.5 * (j as f64 / sigma).powi(2)).exp();
        taps[j.rem_euclid(n as isize) as usize] += w;
    }
    let norm: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= norm);

    let mut tmp = vec![0.0f64; total];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        for (i, out) in tmp.iter_mut().enumerate() {
            let c = (i / stride) % n;
            let base = i - c * stride;
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                if t != 0.0 {
                    acc += t * buf[base + ((c + j) % n) * stride];
                }
            }
            *out = acc;
        }
        std::mem::swap(&mut buf, &mut tmp);
    }
    let mean = buf.iter().sum::<f64>() / total as f64;
    let var = buf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / total as f64;
    let sd = var.sqrt().max(1e-300);
    let values = buf
        .iter()
        .map(|v| clamp01(T::of(0.5 + 0.35 * (v - mean) / sd)))
        .collect();
    ScalarField::new(params.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p2(l: f64, n: f64) -> Params<f64> {
        Params::new(2, 4.0, 0.5, 0.1, l, n).unwrap()
    }

    #[test]
    fn single_stripe_in_one_dimension() {
        let p = Params::new(1, 3.0, 1.0, 0.1, 2.0, 4.0).unwrap();
        let u = make_stripe_field(&p, 0, 1.0, 0.0).unwrap();
        assert_eq!(u.values(), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stripe_has_half_ones_and_constant_columns() {
        let p = p2(4.0, 4.0);
        let u = make_stripe_field(&p, 0, 1.0, 0.0).unwrap();
        let ones = u.values().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones * 2, u.len());
        for i in 0..u.len() {
            assert_eq!(u.values()[i], u.values()[u.shifted(i, 1, 3)]);
        }
    }

    #[test]
    fn stripe_rejects_incommensurate_period() {
        let p = p2(4.0, 4.0);
        let e = make_stripe_field(&p, 0, 0.3, 0.0).unwrap_err();
        assert!(e.to_string().contains("half_period"));
        assert!(make_stripe_field(&p, 0, 1.5, 0.0).is_err());
    }

    #[test]
    fn random_field_is_deterministic_and_bounded() {
        let p = p2(2.0, 8.0);
        let a = make_random_field(&p, 1, 0.25).unwrap();
        let b = make_random_field(&p, 1, 0.25).unwrap();
        let c = make_random_field(&p, 2, 0.25).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(make_random_field(&p, 1, 0.01).is_err());
    }

    #[test]
    fn shifts_and_coordinates_agree() {
        let p = Params::new(3, 5.0, 0.5, 0.1, 1.0, 4.0).unwrap();
        let u = make_random_field(&p, 3, 0.25).unwrap();
        for i in [0, 7, 33, 63] {
            let c = u.coords(i);
            assert_eq!(u.index(&c), i);
            let mut c2 = c.clone();
            c2[1] = (c2[1] + 3) % 4;
            assert_eq!(u.shifted(i, 1, 3), u.index(&c2));
            assert_eq!(u.shifted(i, 1, -1), u.shifted(i, 1, 3));
        }
        let r = u.rolled(2, 1);
        assert_eq!(r.values()[u.shifted(5, 2, 1)], u.values()[5]);
    }

    #[test]
    fn rejects_out_of_range_values() {
        let p = Params::new(1, 3.0, 1.0, 0.1, 1.0, 2.0).unwrap();
        assert!(ScalarField::new(p.clone(), vec![0.5, 1.5]).is_err());
        assert!(ScalarField::new(p.clone(), vec![0.5, f64::NAN]).is_err());
        assert!(ScalarField::new(p, vec![0.5]).is_err());
    }

    proptest! {
        #[test]
        fn random_fields_stay_in_unit_interval(seed in 0u64..1000, sm in 0.125f64..1.0) {
            let p = p2(2.0, 8.0);
            let u = make_random_field(&p, seed, sm).unwrap();
            prop_assert!(u.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
