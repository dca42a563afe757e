use crate::error::{param, Result};
use crate::Real;

/// Physical and numerical parameters. Immutable once built; the `with_*`
/// methods return validated copies.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    d: usize,
    p: T,
    tau: T,
    eps: T,
    box_len: T,
    n_per_unit: T,
    beta: T,
    alpha: T,
    cells: usize,
    r_cut: Option<T>,
    theta_g: Option<T>,
    quad_tol: T,
}

impl<T: Real> Params<T> {
    /// Builds parameters for the torus `[0, box_len)^d` sampled with
    /// `n_per_unit` cells per unit length.
    pub fn new(d: usize, p: T, tau: T, eps: T, box_len: T, n_per_unit: T) -> Result<Self> {
        if d == 0 {
            return Err(param("d", "dimension must be at least 1"));
        }
        if !(p >= T::of_usize(d + 2)) {
            return Err(param("p", format!("need p >= d + 2 = {}, got {p}", d + 2)));
        }
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(param("tau", format!("need tau > 0, got {tau}")));
        }
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(param("eps", format!("need eps > 0, got {eps}")));
        }
        if !(box_len > T::zero()) || !box_len.is_finite() {
            return Err(param("L", format!("need L > 0, got {box_len}")));
        }
        if !(n_per_unit > T::zero()) || !n_per_unit.is_finite() {
            return Err(param("n_per_unit", format!("need n_per_unit > 0, got {n_per_unit}")));
        }
        let cells_real = (n_per_unit * box_len).f64();
        let cells = cells_real.round();
        if cells < 1.0 || (cells_real - cells).abs() > 1e-6 * cells.max(1.0) {
            return Err(param(
                "n_per_unit",
                format!("n_per_unit * L = {cells_real} is not an integer cell count"),
            ));
        }
        let beta = p - T::of_usize(d) - T::one();
        let alpha = eps * tau.powf(beta.recip());
        Ok(Self {
            d,
            p,
            tau,
            eps,
            box_len,
            n_per_unit,
            beta,
            alpha,
            cells: cells as usize,
            r_cut: None,
            theta_g: None,
            quad_tol: T::of(1e-10),
        })
    }

    pub fn with_box_len(&self, box_len: T) -> Result<Self> {
        let mut p = Self::new(self.d, self.p, self.tau, self.eps, box_len, self.n_per_unit)?;
        p.r_cut = self.r_cut;
        p.theta_g = self.theta_g;
        p.quad_tol = self.quad_tol;
        Ok(p)
    }

    pub fn with_n_per_unit(&self, n_per_unit: T) -> Result<Self> {
        let mut p = Self::new(self.d, self.p, self.tau, self.eps, self.box_len, n_per_unit)?;
        p.r_cut = self.r_cut;
        p.theta_g = self.theta_g;
        p.quad_tol = self.quad_tol;
        Ok(p)
    }

    pub fn with_eps(&self, eps: T) -> Result<Self> {
        let mut p = Self::new(self.d, self.p, self.tau, eps, self.box_len, self.n_per_unit)?;
        p.r_cut = self.r_cut;
        p.theta_g = self.theta_g;
        p.quad_tol = self.quad_tol;
        Ok(p)
    }

    pub fn with_r_cut(mut self, r_cut: T) -> Result<Self> {
        if !(r_cut > T::zero()) {
            return Err(param("r_cut", format!("need r_cut > 0, got {r_cut}")));
        }
        self.r_cut = Some(r_cut);
        Ok(self)
    }

    pub fn with_theta_g(mut self, theta_g: T) -> Result<Self> {
        if !(theta_g >= T::zero()) {
            return Err(param("theta_g", format!("need theta_g >= 0, got {theta_g}")));
        }
        self.theta_g = Some(theta_g);
        Ok(self)
    }

    pub fn with_quad_tol(mut self, quad_tol: T) -> Result<Self> {
        if !(quad_tol > T::zero()) {
            return Err(param("quad_tol", format!("need quad_tol > 0, got {quad_tol}")));
        }
        self.quad_tol = quad_tol;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn p(&self) -> T {
        self.p
    }
    pub fn tau(&self) -> T {
        self.tau
    }
    pub fn eps(&self) -> T {
        self.eps
    }
    /// Torus side `L`.
    pub fn box_len(&self) -> T {
        self.box_len
    }
    pub fn n_per_unit(&self) -> T {
        self.n_per_unit
    }
    /// `beta = p - d - 1`.
    pub fn beta(&self) -> T {
        self.beta
    }
    /// `alpha = eps * tau^(1/beta)`.
    pub fn alpha(&self) -> T {
        self.alpha
    }
    /// Kernel offset `a = tau^(1/beta)`.
    pub fn offset(&self) -> T {
        self.tau.powf(self.beta.recip())
    }
    /// Cells per axis.
    pub fn cells(&self) -> usize {
        self.cells
    }
    /// Total number of samples `N^d`.
    pub fn len(&self) -> usize {
        self.cells.pow(self.d as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Grid spacing `L / N`.
    pub fn spacing(&self) -> T {
        self.box_len / T::of_usize(self.cells)
    }
    /// Explicit override of the kernel truncation radius, if any.
    pub fn r_cut_override(&self) -> Option<T> {
        self.r_cut
    }
    /// Cells with `|grad u|_1` below this count as gradient-free.
    pub fn theta_g(&self) -> T {
        self.theta_g
            .unwrap_or_else(|| T::of(1e-8) / self.spacing())
    }
    pub fn quad_tol(&self) -> T {
        self.quad_tol
    }

    /// Same physical parameters in another scalar type.
    pub fn cast<U: Real>(&self) -> Params<U> {
        let c = |x: T| U::of(x.f64());
        Params {
            d: self.d,
            p: c(self.p),
            tau: c(self.tau),
            eps: c(self.eps),
            box_len: c(self.box_len),
            n_per_unit: c(self.n_per_unit),
            beta: c(self.beta),
            alpha: c(self.alpha),
            cells: self.cells,
            r_cut: self.r_cut.map(c),
            theta_g: self.theta_g.map(c),
            quad_tol: c(self.quad_tol),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn derived_quantities() {
        let p = Params::new(2, 4.0, 0.5, 0.1, 2.0, 10.0).unwrap();
        assert_eq!(p.beta(), 1.0);
        assert_eq!(p.alpha(), 0.1 * 0.5f64.powf(1.0));
        assert_eq!(p.cells(), 20);
        assert_eq!(p.len(), 400);
        assert!((p.spacing() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Params::new(2, 3.5, 0.5, 0.1, 2.0, 10.0).is_err());
        assert!(Params::new(1, 3.0, 0.0, 0.1, 2.0, 10.0).is_err());
        assert!(Params::new(1, 3.0, 0.1, -1.0, 2.0, 10.0).is_err());
        assert!(Params::new(1, 3.0, 0.1, 0.1, 2.05, 10.0).is_err());
        let e = Params::new(0, 3.0, 0.1, 0.1, 1.0, 10.0).unwrap_err();
        assert!(e.to_string().contains("`d`"));
    }

    #[test]
    fn generic_over_f32() {
        let p = Params::<f32>::new(1, 3.0, 0.05, 0.05, 2.0, 100.0).unwrap();
        assert_eq!(p.cells(), 200);
        assert_eq!(p.alpha(), 0.05f32 * 0.05f32.powf(1.0));
    }

    proptest! {
        #[test]
        fn alpha_is_stored_exactly(
            d in 1usize..4, dp in 0.0f64..3.0, tau in 1e-3f64..2.0, eps in 1e-3f64..1.0,
        ) {
            let p = d as f64 + 2.0 + dp;
            let prm = Params::new(d, p, tau, eps, 1.0, 8.0).unwrap();
            prop_assert_eq!(prm.beta(), p - d as f64 - 1.0);
            prop_assert_eq!(prm.alpha(), eps * tau.powf(1.0 / prm.beta()));
            prop_assert!(prm.beta() > 0.0);
        }
    }
}
