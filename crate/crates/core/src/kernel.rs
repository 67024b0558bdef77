//! Smoothing densities.
//!
//! Two radial families are supported: the polynomial-tail density
//! `sigma^-d * C_rho * (|x|/sigma + 1)^-rho` and the isotropic Gaussian.
//! The polynomial-tail normalisation is evaluated in closed form through the
//! radial reduction `C_rho^-1 = |S^{d-1}| * B(d, rho - d)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{MpdError, Result};

/// Tail exponent used when none is given.
pub const DEFAULT_RHO: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    PolyTail,
    Gaussian,
}

/// Serializable description of a smoothing density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub sigma: f64,
    pub dim: usize,
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

impl KernelSpec {
    pub fn poly_tail(rho: f64, sigma: f64, dim: usize) -> Self {
        Self {
            family: KernelFamily::PolyTail,
            rho,
            sigma,
            dim,
        }
    }

    pub fn gaussian(sigma: f64, dim: usize) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            rho: DEFAULT_RHO,
            sigma,
            dim,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self {
            sigma,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(MpdError::InvalidKernel(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.dim == 0 {
            return Err(MpdError::InvalidKernel("dim must be at least 1".into()));
        }
        if self.family == KernelFamily::PolyTail && !(self.rho > self.dim as f64 + 1.0) {
            return Err(MpdError::InvalidKernel(format!(
                "poly_tail requires rho > dim + 1, got rho = {} with dim = {}",
                self.rho, self.dim
            )));
        }
        Ok(())
    }

    /// Rejects exponents the limit theory does not cover (`rho <= gamma + dim`).
    pub fn validate_for_gamma(&self, gamma: f64) -> Result<()> {
        self.validate()?;
        if self.family == KernelFamily::PolyTail && !(self.rho > gamma + self.dim as f64) {
            return Err(MpdError::InvalidKernel(format!(
                "rho = {} must exceed gamma + dim = {}",
                self.rho,
                gamma + self.dim as f64
            )));
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<Kernel> {
        self.validate()?;
        Kernel::new(self)
    }
}

/// Surface area of the unit sphere in `R^dim`.
pub fn unit_sphere_area(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / ln_gamma(h).exp()
}

/// `C_rho` such that `C_rho (|x|_2 + 1)^-rho` integrates to one over `R^dim`.
pub fn normalization_constant(rho: f64, dim: usize) -> Result<f64> {
    if dim == 0 {
        return Err(MpdError::InvalidKernel("dim must be at least 1".into()));
    }
    let d = dim as f64;
    if !(rho > d) {
        return Err(MpdError::NonIntegrableDensity { rho, dim });
    }
    let ln_beta = ln_gamma(d) + ln_gamma(rho - d) - ln_gamma(rho);
    Ok(1.0 / (unit_sphere_area(dim) * ln_beta.exp()))
}

/// A validated kernel with its constants precomputed.
#[derive(Debug, Clone)]
pub struct Kernel {
    family: KernelFamily,
    rho: f64,
    rho_int: Option<i32>,
    sigma: f64,
    inv_sigma: f64,
    dim: usize,
    /// Value at the origin, `sigma^-d C_rho` or `(2 pi sigma^2)^(-d/2)`.
    peak: f64,
    ln_peak: f64,
}

impl Kernel {
    fn new(spec: &KernelSpec) -> Result<Self> {
        let d = spec.dim as f64;
        let peak = match spec.family {
            KernelFamily::PolyTail => normalization_constant(spec.rho, spec.dim)? * spec.sigma.powf(-d),
            KernelFamily::Gaussian => {
                (2.0 * std::f64::consts::PI * spec.sigma * spec.sigma).powf(-d / 2.0)
            }
        };
        let rho_int = (spec.rho.fract() == 0.0 && spec.rho.abs() < 64.0).then_some(spec.rho as i32);
        Ok(Self {
            family: spec.family,
            rho: spec.rho,
            rho_int,
            sigma: spec.sigma,
            inv_sigma: 1.0 / spec.sigma,
            dim: spec.dim,
            peak,
            ln_peak: peak.ln(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// `C_rho` for the polynomial family (value at the origin when sigma = 1).
    pub fn c_rho(&self) -> f64 {
        self.peak * self.sigma.powi(self.dim as i32)
    }

    /// Density at Euclidean radius `r`.
    #[inline]
    pub fn at_radius(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::PolyTail => {
                let t = r * self.inv_sigma + 1.0;
                match self.rho_int {
                    Some(k) => self.peak / t.powi(k),
                    None => self.peak * t.powf(-self.rho),
                }
            }
            KernelFamily::Gaussian => {
                let u = r * self.inv_sigma;
                self.peak * (-0.5 * u * u).exp()
            }
        }
    }

    /// Natural log of the density at radius `r`; finite even where the density underflows.
    #[inline]
    pub fn ln_at_radius(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::PolyTail => self.ln_peak - self.rho * (r * self.inv_sigma).ln_1p(),
            KernelFamily::Gaussian => {
                let u = r * self.inv_sigma;
                self.ln_peak - 0.5 * u * u
            }
        }
    }

    /// Density at `a - b`.
    #[inline]
    pub fn at_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        self.at_radius(dist(a, b))
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        self.at_radius(norm(x))
    }

    /// `|grad f(x)|_2 = rho sigma^-(d+1) C_rho (|x|/sigma + 1)^-(rho+1)`.
    pub fn gradient_norm(&self, x: &[f64]) -> Result<f64> {
        if self.family != KernelFamily::PolyTail {
            return Err(MpdError::Unsupported(
                "gradient norm is only defined for the poly_tail family".into(),
            ));
        }
        let t = norm(x) * self.inv_sigma + 1.0;
        Ok(self.rho * self.peak * self.inv_sigma * t.powf(-(self.rho + 1.0)))
    }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn check_dim(x: &[f64], spec: &KernelSpec) -> Result<()> {
    if x.len() != spec.dim {
        return Err(MpdError::Shape(format!(
            "point has {} coordinates, kernel dim is {}",
            x.len(),
            spec.dim
        )));
    }
    Ok(())
}

pub fn density(x: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dim(x, spec)?;
    Ok(spec.prepare()?.at(x))
}

pub fn density_gradient_norm(x: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dim(x, spec)?;
    spec.prepare()?.gradient_norm(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Adaptive Simpson on [a, b]; independent of the closed form.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    /// Integral over R^dim of a radial profile, via r = u / (1 - u).
    fn radial_integral<F: Fn(f64) -> f64>(profile: F, dim: usize, scale: f64) -> f64 {
        let area = match dim {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI,
            3 => 4.0 * std::f64::consts::PI,
            _ => unreachable!(),
        };
        let g = |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let r = scale * u / (1.0 - u);
            let jac = scale / ((1.0 - u) * (1.0 - u));
            area * r.powi(dim as i32 - 1) * profile(r) * jac
        };
        simpson(&g, 0.0, 1.0, 1e-12)
    }

    #[test]
    fn normalization_examples() {
        assert_relative_eq!(normalization_constant(5.0, 1).unwrap(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(normalization_constant(2.0, 1).unwrap(), 0.5, max_relative = 1e-12);
        assert_relative_eq!(
            normalization_constant(5.0, 2).unwrap(),
            6.0 / std::f64::consts::PI,
            max_relative = 1e-12
        );
    }

    #[test]
    fn normalization_matches_quadrature_oracle() {
        for &(rho, dim) in &[(5.0, 1), (2.0, 1), (5.0, 2), (3.5, 2), (7.0, 3)] {
            let inv = radial_integral(|r| (r + 1.0f64).powf(-rho), dim, 1.0);
            assert_relative_eq!(normalization_constant(rho, dim).unwrap(), 1.0 / inv, max_relative = 1e-7);
        }
    }

    #[test]
    fn non_integrable_rejected() {
        assert!(matches!(
            normalization_constant(1.0, 1),
            Err(MpdError::NonIntegrableDensity { .. })
        ));
        assert!(normalization_constant(2.0, 2).is_err());
    }

    #[test]
    fn density_examples() {
        let s = KernelSpec::poly_tail(5.0, 1.0, 1);
        assert_relative_eq!(density(&[0.0], &s).unwrap(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(density(&[1.0], &s).unwrap(), 0.0625, max_relative = 1e-12);
        assert_relative_eq!(density(&[-1.0], &s).unwrap(), 0.0625, max_relative = 1e-12);
        let s2 = KernelSpec::poly_tail(5.0, 2.0, 1);
        assert_relative_eq!(density(&[0.0], &s2).unwrap(), 1.0, max_relative = 1e-12);
        assert!(matches!(density(&[0.0, 1.0], &s), Err(MpdError::Shape(_))));
    }

    #[test]
    fn gaussian_density_is_standard_normal_scaled() {
        let s = KernelSpec::gaussian(2.0, 1);
        let expected = (-0.5f64 * 0.25).exp() / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert_relative_eq!(density(&[1.0], &s).unwrap(), expected, max_relative = 1e-12);
        assert!(matches!(
            density_gradient_norm(&[1.0], &s),
            Err(MpdError::Unsupported(_))
        ));
    }

    #[test]
    fn gradient_examples() {
        let s = KernelSpec::poly_tail(5.0, 1.0, 1);
        assert_relative_eq!(density_gradient_norm(&[0.0], &s).unwrap(), 10.0, max_relative = 1e-12);
        assert_relative_eq!(density_gradient_norm(&[1.0], &s).unwrap(), 0.15625, max_relative = 1e-12);
        // finite-difference oracle
        let h = 1e-6;
        let fd = (density(&[1.0 + h], &s).unwrap() - density(&[1.0 - h], &s).unwrap()) / (2.0 * h);
        assert_relative_eq!(fd.abs(), 0.15625, max_relative = 1e-4);
        // scaling identity: grad at x with sigma=2 equals grad at x/2 (sigma=1) / 2^(d+1)
        let s2 = KernelSpec::poly_tail(5.0, 2.0, 2);
        let s1 = KernelSpec::poly_tail(5.0, 1.0, 2);
        let x = [0.7, -1.3];
        let half = [0.35, -0.65];
        assert_relative_eq!(
            density_gradient_norm(&x, &s2).unwrap(),
            density_gradient_norm(&half, &s1).unwrap() / 8.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::poly_tail(2.0, 1.0, 1).validate().is_err());
        assert!(KernelSpec::poly_tail(5.0, 0.0, 1).validate().is_err());
        assert!(KernelSpec::poly_tail(5.0, 1.0, 0).validate().is_err());
        assert!(KernelSpec::poly_tail(5.0, 1.0, 3).validate().is_ok());
        assert!(KernelSpec::poly_tail(4.5, 1.0, 3).validate_for_gamma(1.0).is_ok());
        assert!(KernelSpec::poly_tail(4.0, 1.0, 3).validate_for_gamma(1.0).is_err());
        assert!(KernelSpec::poly_tail(5.0, 1.0, 1).validate_for_gamma(4.0).is_err());
    }

    #[test]
    fn json_shape() {
        let s = KernelSpec::poly_tail(5.0, 1.0, 1);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"family":"poly_tail","rho":5.0,"sigma":1.0,"dim":1}"#);
        let back: KernelSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        let g: KernelSpec = serde_json::from_str(r#"{"family":"gaussian","sigma":2.0,"dim":2}"#).unwrap();
        assert_eq!(g.family, KernelFamily::Gaussian);
    }

    #[test]
    fn unit_mass_by_quadrature() {
        for dim in [1usize, 2] {
            for sigma in [0.5, 1.0, 10.0] {
                for rho in [3.0, 5.0, 8.0] {
                    let spec = KernelSpec::poly_tail(rho, sigma, dim);
                    if spec.validate().is_err() {
                        continue;
                    }
                    let k = spec.prepare().unwrap();
                    let mass = radial_integral(|r| k.at_radius(r), dim, sigma);
                    assert!((mass - 1.0).abs() < 1e-4, "rho {rho} sigma {sigma} dim {dim}: {mass}");
                }
                let k = KernelSpec::gaussian(sigma, dim).prepare().unwrap();
                let mass = radial_integral(|r| k.at_radius(r), dim, sigma);
                assert!((mass - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn log_density_consistent() {
        let k = KernelSpec::poly_tail(5.0, 0.3, 2).prepare().unwrap();
        for r in [0.0, 0.1, 2.0, 50.0] {
            assert_relative_eq!(k.ln_at_radius(r), k.at_radius(r).ln(), max_relative = 1e-12);
        }
        // far tail stays finite in log form
        let tiny = KernelSpec::gaussian(0.01, 1).prepare().unwrap();
        assert_eq!(tiny.at_radius(50.0), 0.0);
        assert!(tiny.ln_at_radius(50.0).is_finite());
    }

    proptest! {
        #[test]
        fn radial_symmetry(x in proptest::collection::vec(-20.0f64..20.0, 1..3), sigma in 0.2f64..5.0) {
            let spec = KernelSpec::poly_tail(5.0, sigma, x.len());
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert_eq!(density(&x, &spec).unwrap(), density(&neg, &spec).unwrap());
        }

        #[test]
        fn gradient_matches_finite_difference(x in proptest::collection::vec(-5.0f64..5.0, 1..3), sigma in 0.5f64..3.0) {
            let spec = KernelSpec::poly_tail(5.0, sigma, x.len());
            let k = spec.prepare().unwrap();
            prop_assume!(norm(&x) > 1e-3);
            let h = 1e-6;
            let mut grad_sq = 0.0;
            for i in 0..x.len() {
                let mut p = x.clone();
                let mut m = x.clone();
                p[i] += h;
                m[i] -= h;
                let g = (k.at(&p) - k.at(&m)) / (2.0 * h);
                grad_sq += g * g;
            }
            let exact = k.gradient_norm(&x).unwrap();
            prop_assert!((grad_sq.sqrt() - exact).abs() <= 1e-4 * exact);
        }
    }
}
