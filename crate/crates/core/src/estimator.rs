//! The smoothed empirical martingale projection distance.
//!
//! For a sample `(X_i, Y_i)` and kernel `f`, the drift numerator is
//! `xi(x) = (1/n) sum (Y_i - X_i) f(x - X_i)`, the smoothed density is
//! `p(x) = (1/n) sum f(x - X_i)`, and the distance is
//! `2^(1-gamma) * integral |xi(x)|^gamma / p(x)^(gamma-1) dx`,
//! evaluated by a midpoint sum over a rectangular grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MpdError, Result};
use crate::grid::{GridSpec, DEFAULT_NODE_CAP};
use crate::kernel::{Kernel, KernelSpec};
use crate::sample::PairedSample;

/// Below this value the plain density sum is recomputed in log space.
pub(crate) const UNDERFLOW_GUARD: f64 = 1e-300;

/// Nodes per parallel work unit. Fixed so that the reduction order never
/// depends on the number of workers.
pub(crate) const NODE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpdConfig {
    pub gamma: f64,
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    #[serde(default = "default_cap")]
    pub node_cap: u64,
}

fn default_cap() -> u64 {
    DEFAULT_NODE_CAP
}

impl MpdConfig {
    pub fn new(gamma: f64, kernel: KernelSpec, grid: GridSpec) -> Self {
        Self { gamma, kernel, grid, node_cap: DEFAULT_NODE_CAP }
    }

    /// gamma = 1, poly-tail kernel with rho = 5 and sigma = 1, integer grid on [-50, 50]^d.
    pub fn default_for(dim: usize) -> Self {
        Self::new(1.0, KernelSpec::poly_tail(crate::kernel::DEFAULT_RHO, 1.0, dim), GridSpec::default_for(dim))
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self { kernel: self.kernel.with_sigma(sigma), ..self.clone() }
    }

    pub fn with_grid(&self, grid: GridSpec) -> Self {
        Self { grid, ..self.clone() }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(MpdError::Parameter(format!("gamma = {} must be at least 1", self.gamma)));
        }
        self.kernel.validate()?;
        self.kernel.validate_for_gamma(self.gamma)?;
        if self.grid.dim() != self.kernel.dim {
            return Err(MpdError::Shape(format!(
                "grid has dimension {} but kernel has {}",
                self.grid.dim(),
                self.kernel.dim
            )));
        }
        self.grid.validate(self.node_cap)
    }

    pub(crate) fn check_sample(&self, sample: &PairedSample) -> Result<()> {
        self.validate()?;
        if sample.dim() != self.kernel.dim {
            return Err(MpdError::Shape(format!(
                "sample has dimension {} but kernel has {}",
                sample.dim(),
                self.kernel.dim
            )));
        }
        Ok(())
    }
}

/// Evaluates the drift numerator and smoothed density of one sample at arbitrary points.
pub struct FieldEvaluator {
    kernel: Kernel,
    pub(crate) xs: Vec<f64>,
    /// `Y_i - X_i`, row-major, in the same canonical row order as `xs`.
    pub(crate) diffs: Vec<f64>,
    pub(crate) n: usize,
    dim: usize,
}

impl FieldEvaluator {
    /// Rows are put in a canonical order first, so the result does not
    /// depend on how the sample was ordered, down to the last bit.
    pub fn new(sample: &PairedSample, spec: &KernelSpec) -> Result<Self> {
        if sample.dim() != spec.dim {
            return Err(MpdError::Shape(format!(
                "sample has dimension {} but kernel has {}",
                sample.dim(),
                spec.dim
            )));
        }
        let d = sample.dim();
        let mut order: Vec<usize> = (0..sample.len()).collect();
        order.sort_by(|&a, &b| {
            let ka = sample.x(a).iter().chain(sample.y(a));
            let kb = sample.x(b).iter().chain(sample.y(b));
            ka.zip(kb)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut xs = Vec::with_capacity(sample.len() * d);
        let mut diffs = Vec::with_capacity(sample.len() * d);
        for &i in &order {
            xs.extend_from_slice(sample.x(i));
            diffs.extend(sample.y(i).iter().zip(sample.x(i)).map(|(y, x)| y - x));
        }
        Ok(Self {
            kernel: spec.prepare()?,
            xs,
            diffs,
            n: sample.len(),
            dim: sample.dim(),
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Kernel weights `f(x - X_i)` in canonical row order.
    #[inline]
    pub(crate) fn kernel_row(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        if d == 1 {
            let x0 = x[0];
            for (o, xi) in out.iter_mut().zip(&self.xs) {
                *o = self.kernel.at_radius((x0 - xi).abs());
            }
        } else {
            for (o, row) in out.iter_mut().zip(self.xs.chunks_exact(d)) {
                *o = self.kernel.at_diff(x, row);
            }
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(MpdError::Shape(format!(
                "point has {} coordinates, sample dim is {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Writes the drift numerator into `numerator` and returns the density, by plain summation.
    #[inline]
    pub(crate) fn fields_into(&self, x: &[f64], numerator: &mut [f64]) -> f64 {
        let d = self.dim;
        numerator.fill(0.0);
        let mut density = 0.0;
        if d == 1 {
            let x0 = x[0];
            let mut num = 0.0;
            for (xi, di) in self.xs.iter().zip(&self.diffs) {
                let w = self.kernel.at_radius((x0 - xi).abs());
                density += w;
                num += di * w;
            }
            numerator[0] = num / self.n as f64;
        } else {
            for i in 0..self.n {
                let row = &self.xs[i * d..(i + 1) * d];
                let w = self.kernel.at_diff(x, row);
                density += w;
                for (acc, di) in numerator.iter_mut().zip(&self.diffs[i * d..(i + 1) * d]) {
                    *acc += di * w;
                }
            }
            let inv_n = 1.0 / self.n as f64;
            for v in numerator.iter_mut() {
                *v *= inv_n;
            }
        }
        density / self.n as f64
    }

    /// Log-stabilized evaluation: writes the conditional drift into `drift`
    /// and returns `ln p(x)`. The largest kernel weight is factored out of
    /// both sums so that nothing underflows.
    pub(crate) fn stable_drift_into(&self, x: &[f64], drift: &mut [f64]) -> f64 {
        let d = self.dim;
        let logs: Vec<f64> = (0..self.n)
            .map(|i| self.kernel.ln_at_radius(crate::kernel::dist(x, &self.xs[i * d..(i + 1) * d])))
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        drift.fill(0.0);
        let mut total = 0.0;
        for (i, l) in logs.iter().enumerate() {
            let w = (l - top).exp();
            total += w;
            for (acc, di) in drift.iter_mut().zip(&self.diffs[i * d..(i + 1) * d]) {
                *acc += di * w;
            }
        }
        for v in drift.iter_mut() {
            *v /= total;
        }
        top + (total / self.n as f64).ln()
    }

    /// `|xi(x)|^gamma / p(x)^(gamma - 1)`; `scratch` must hold `dim` entries.
    #[inline]
    pub(crate) fn integrand(&self, x: &[f64], gamma: f64, scratch: &mut [f64]) -> f64 {
        let p = self.fields_into(x, scratch);
        if p >= UNDERFLOW_GUARD {
            let norm = crate::kernel::norm(scratch);
            if gamma == 1.0 {
                norm
            } else if gamma == 2.0 {
                norm * norm / p
            } else {
                norm.powf(gamma) * p.powf(1.0 - gamma)
            }
        } else {
            let ln_p = self.stable_drift_into(x, scratch);
            let norm = crate::kernel::norm(scratch);
            if norm == 0.0 {
                0.0
            } else {
                (gamma * norm.ln() + ln_p).exp()
            }
        }
    }

    pub fn drift_numerator(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        let p = self.fields_into(x, &mut out);
        if p < UNDERFLOW_GUARD {
            let ln_p = self.stable_drift_into(x, &mut out);
            let p = ln_p.exp();
            for v in &mut out {
                *v *= p;
            }
        }
        Ok(out)
    }

    pub fn density_estimate(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut scratch = vec![0.0; self.dim];
        Ok(self.fields_into(x, &mut scratch))
    }

    pub fn conditional_drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        let p = self.fields_into(x, &mut out);
        if p >= UNDERFLOW_GUARD {
            for v in &mut out {
                *v /= p;
            }
        } else {
            self.stable_drift_into(x, &mut out);
        }
        Ok(out)
    }

    /// Density values at every grid node, in node order.
    pub fn density_on_grid(&self, grid: &GridSpec) -> Vec<f64> {
        let counts = grid.axis_counts();
        let m = grid.node_count();
        let d = self.dim;
        let mut out = vec![0.0; m];
        out.par_chunks_mut(NODE_CHUNK).enumerate().for_each(|(c, chunk)| {
            let mut node = vec![0.0; d];
            let mut scratch = vec![0.0; d];
            for (k, slot) in chunk.iter_mut().enumerate() {
                grid.node_into(&counts, c * NODE_CHUNK + k, &mut node);
                *slot = self.fields_into(&node, &mut scratch);
            }
        });
        out
    }

    /// Grid sum of the integrand times the cell volume, without the `2^(1-gamma)` prefactor.
    pub(crate) fn integrate(&self, grid: &GridSpec, gamma: f64) -> f64 {
        let counts = grid.axis_counts();
        let m = grid.node_count();
        let d = self.dim;
        let chunks = m.div_ceil(NODE_CHUNK);
        let partial: Vec<f64> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut node = vec![0.0; d];
                let mut scratch = vec![0.0; d];
                let mut acc = 0.0;
                for idx in c * NODE_CHUNK..((c + 1) * NODE_CHUNK).min(m) {
                    grid.node_into(&counts, idx, &mut node);
                    acc += self.integrand(&node, gamma, &mut scratch);
                }
                acc
            })
            .collect();
        partial.iter().sum::<f64>() * grid.cell_volume()
    }
}

pub fn drift_numerator(x: &[f64], sample: &PairedSample, kernel: &KernelSpec) -> Result<Vec<f64>> {
    FieldEvaluator::new(sample, kernel)?.drift_numerator(x)
}

pub fn density_estimate(x: &[f64], sample: &PairedSample, kernel: &KernelSpec) -> Result<f64> {
    FieldEvaluator::new(sample, kernel)?.density_estimate(x)
}

/// Smoothed estimate of `E[Y - X | X = x]`.
pub fn conditional_drift(x: &[f64], sample: &PairedSample, kernel: &KernelSpec) -> Result<Vec<f64>> {
    FieldEvaluator::new(sample, kernel)?.conditional_drift(x)
}

pub fn smoothed_mpd(sample: &PairedSample, cfg: &MpdConfig) -> Result<f64> {
    cfg.check_sample(sample)?;
    let eval = FieldEvaluator::new(sample, &cfg.kernel)?;
    Ok(2f64.powf(1.0 - cfg.gamma) * eval.integrate(&cfg.grid, cfg.gamma))
}

/// `n^(gamma/2)` times the smoothed distance.
pub fn test_statistic(sample: &PairedSample, cfg: &MpdConfig) -> Result<f64> {
    Ok((sample.len() as f64).powf(cfg.gamma / 2.0) * smoothed_mpd(sample, cfg)?)
}

/// Smoothed-density mass that falls outside the grid, `1 - sum p(x) * cell volume`.
pub fn truncation_mass(sample: &PairedSample, kernel: &KernelSpec, grid: &GridSpec) -> Result<f64> {
    let eval = FieldEvaluator::new(sample, kernel)?;
    let total: f64 = eval
        .density_on_grid(grid)
        .chunks(NODE_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .sum();
    Ok(1.0 - total * grid.cell_volume())
}

/// `2^(1-gamma) (1/n) sum |x_i - E[Y | X = x_i]|^gamma` for a known conditional expectation.
/// `xs` is row-major with rows of length `dim`.
pub fn closed_form_mpd<F>(xs: &[f64], dim: usize, cond_exp: F, gamma: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if dim == 0 || !xs.len().is_multiple_of(dim) {
        return Err(MpdError::Shape("rows do not match the dimension".into()));
    }
    if xs.is_empty() {
        return Err(MpdError::EmptySample);
    }
    if !(gamma >= 1.0) {
        return Err(MpdError::Parameter(format!("gamma = {gamma} must be at least 1")));
    }
    let n = xs.len() / dim;
    let mut acc = 0.0;
    for row in xs.chunks(dim) {
        let m = cond_exp(row);
        if m.len() != dim {
            return Err(MpdError::Shape("conditional expectation has the wrong dimension".into()));
        }
        acc += crate::kernel::dist(row, &m).powf(gamma);
    }
    Ok(2f64.powf(1.0 - gamma) * acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::density;
    use crate::rng::{self, Domain};
    use proptest::prelude::*;

    fn spec1() -> KernelSpec {
        KernelSpec::poly_tail(5.0, 1.0, 1)
    }

    fn random_sample(seed: u64, n: usize, d: usize, scale: f64) -> PairedSample {
        let mut r = rng::stream(seed, Domain::Generator, &[]);
        let xs: Vec<f64> = (0..n * d).map(|_| scale * rng::standard_normal(&mut r)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + rng::standard_normal(&mut r)).collect();
        PairedSample::new(xs, ys, d).unwrap()
    }

    /// Direct sums with no shared code path.
    fn naive_fields(x: &[f64], s: &PairedSample, k: &KernelSpec) -> (Vec<f64>, f64) {
        let mut num = vec![0.0; s.dim()];
        let mut den = 0.0;
        for i in 0..s.len() {
            let diff: Vec<f64> = x.iter().zip(s.x(i)).map(|(a, b)| a - b).collect();
            let w = density(&diff, k).unwrap();
            den += w;
            for j in 0..s.dim() {
                num[j] += (s.y(i)[j] - s.x(i)[j]) * w;
            }
        }
        let n = s.len() as f64;
        (num.iter().map(|v| v / n).collect(), den / n)
    }

    fn naive_mpd(s: &PairedSample, cfg: &MpdConfig) -> f64 {
        let nodes = cfg.grid.nodes();
        let d = s.dim();
        let mut total = 0.0;
        for x in nodes.chunks(d) {
            let (num, den) = naive_fields(x, s, &cfg.kernel);
            let norm = num.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += norm.powf(cfg.gamma) / den.powf(cfg.gamma - 1.0);
        }
        2f64.powf(1.0 - cfg.gamma) * total * cfg.grid.cell_volume()
    }

    #[test]
    fn drift_numerator_examples() {
        let s = PairedSample::from_1d(vec![0.0], vec![1.0]).unwrap();
        assert!((drift_numerator(&[0.0], &s, &spec1()).unwrap()[0] - 2.0).abs() < 1e-12);
        let same = PairedSample::from_1d(vec![0.3, -1.0], vec![0.3, -1.0]).unwrap();
        assert_eq!(drift_numerator(&[0.7], &same, &spec1()).unwrap(), vec![0.0]);
        let r = random_sample(3, 3, 2, 1.0);
        let k = KernelSpec::poly_tail(5.0, 1.3, 2);
        let got = drift_numerator(&[0.2, -0.4], &r, &k).unwrap();
        let (want, _) = naive_fields(&[0.2, -0.4], &r, &k);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn density_estimate_examples() {
        let s = PairedSample::from_1d(vec![0.0], vec![0.0]).unwrap();
        assert!((density_estimate(&[0.0], &s, &spec1()).unwrap() - 2.0).abs() < 1e-12);
        let s = PairedSample::from_1d(vec![-1.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!((density_estimate(&[0.0], &s, &spec1()).unwrap() - 0.0625).abs() < 1e-13);
        let r = random_sample(4, 30, 1, 1.0);
        let mass = 1.0 - truncation_mass(&r, &spec1(), &GridSpec::cube(1, -400.0, 400.0, 0.05)).unwrap();
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn conditional_drift_examples() {
        let xs = [0.1, 1.5, -2.0, 0.4];
        let c = [0.3, -1.2];
        let xs2: Vec<f64> = xs.iter().chain(&[2.0, 1.0, 0.0, -1.0]).copied().collect();
        let ys2: Vec<f64> = xs2.iter().enumerate().map(|(k, v)| v + c[k % 2]).collect();
        let s = PairedSample::new(xs2, ys2, 2).unwrap();
        let k = KernelSpec::poly_tail(5.0, 1.0, 2);
        for x in [[0.0, 0.0], [40.0, -40.0], [3.0, 1.0]] {
            let drift = conditional_drift(&x, &s, &k).unwrap();
            assert!((drift[0] - c[0]).abs() < 1e-12 && (drift[1] - c[1]).abs() < 1e-12);
        }
        let r = random_sample(5, 5, 1, 1.0);
        let mut g = rng::stream(6, Domain::Generator, &[]);
        for _ in 0..20 {
            let x = [rng::uniform(&mut g, -5.0, 5.0)];
            let (num, den) = naive_fields(&x, &r, &spec1());
            let got = conditional_drift(&x, &r, &spec1()).unwrap()[0];
            assert!((got - num[0] / den).abs() < 1e-12);
        }
    }

    #[test]
    fn far_tail_drift_is_stabilized() {
        // At sigma = 1e-3 and distance 1e6 the poly-tail weights underflow to zero;
        // both weights are then nearly equal, so the drift is the mean difference.
        let s = PairedSample::from_1d(vec![0.0, 1.0], vec![1.0, 4.0]).unwrap();
        let k = KernelSpec::poly_tail(80.0, 1e-3, 1);
        let drift = conditional_drift(&[1e6], &s, &k).unwrap()[0];
        let ratio = (1.0f64 - 1e-6).powi(-80);
        let want = (1.0 + 3.0 * ratio) / (1.0 + ratio);
        assert!((drift - want).abs() < 1e-9, "{drift}");
        let near = conditional_drift(&[1.0 + 1e-4], &s, &k).unwrap()[0];
        assert!((near - 3.0).abs() < 1e-9, "{near}");
        assert_eq!(density_estimate(&[1e6], &s, &k).unwrap(), 0.0);
    }

    #[test]
    fn constant_drift_integrates_to_the_shift() {
        let mut r = rng::stream(11, Domain::Generator, &[]);
        let xs: Vec<f64> = (0..200).map(|_| rng::standard_normal(&mut r)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + 0.5).collect();
        let s = PairedSample::from_1d(xs, ys).unwrap();
        let cfg = MpdConfig::new(1.0, spec1(), GridSpec::cube(1, -60.0, 60.0, 0.05));
        let v = smoothed_mpd(&s, &cfg).unwrap();
        assert!((v - 0.5).abs() < 0.01, "{v}");
    }

    #[test]
    fn zero_for_identical_pairs() {
        let s = random_sample(8, 20, 2, 1.0);
        let same = PairedSample::new(s.xs().to_vec(), s.xs().to_vec(), 2).unwrap();
        let cfg = MpdConfig::default_for(2);
        assert_eq!(smoothed_mpd(&same, &cfg).unwrap(), 0.0);
        assert_eq!(test_statistic(&same, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn gamma_two_matches_brute_force() {
        let s = PairedSample::from_1d(vec![0.0, 1.0, -2.0, 0.5], vec![1.0, 0.0, -1.0, 3.0]).unwrap();
        let cfg = MpdConfig::new(2.0, spec1(), GridSpec::cube(1, -20.0, 20.0, 0.25));
        let got = smoothed_mpd(&s, &cfg).unwrap();
        let want = naive_mpd(&s, &cfg);
        assert!((got - want).abs() <= 1e-10 * want.max(1.0));
    }

    #[test]
    fn statistic_scales_with_root_n() {
        let s = random_sample(9, 40, 1, 1.0);
        let cfg = MpdConfig::default_for(1);
        let t = test_statistic(&s, &cfg).unwrap();
        let m = smoothed_mpd(&s, &cfg).unwrap();
        assert!((t - 40f64.sqrt() * m).abs() < 1e-12);
        let doubled = s.repeated(2).unwrap();
        let t2 = test_statistic(&doubled, &cfg).unwrap();
        assert!((t2 / t - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        let xs = vec![0.5, -1.0, 2.0];
        assert_eq!(closed_form_mpd(&xs, 1, |x| x.to_vec(), 1.0).unwrap(), 0.0);
        let v = closed_form_mpd(&xs, 1, |x| vec![x[0] + 1.0], 2.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let mut r = rng::stream(12, Domain::Generator, &[]);
        let xs: Vec<f64> = (0..200_000).map(|_| rng::standard_normal(&mut r)).collect();
        let v = closed_form_mpd(&xs, 1, |x| vec![2.0 * x[0]], 1.0).unwrap();
        assert!((v - (2.0 / std::f64::consts::PI).sqrt()).abs() < 5e-3, "{v}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let s = random_sample(1, 5, 1, 1.0);
        let bad_gamma = MpdConfig::default_for(1).with_gamma(0.5);
        assert!(smoothed_mpd(&s, &bad_gamma).is_err());
        let heavy = MpdConfig::new(3.0, KernelSpec::poly_tail(3.5, 1.0, 1), GridSpec::default_for(1));
        assert!(smoothed_mpd(&s, &heavy).is_err());
        let wrong_dim = MpdConfig::default_for(2);
        assert!(smoothed_mpd(&s, &wrong_dim).is_err());
        let huge = MpdConfig::default_for(1).with_grid(GridSpec::cube(1, -1e9, 1e9, 1e-3));
        assert!(matches!(smoothed_mpd(&s, &huge), Err(MpdError::GridTooLarge { .. })));
    }

    #[test]
    fn gaussian_kernel_runs() {
        let s = random_sample(2, 30, 1, 1.0);
        let cfg = MpdConfig::new(1.0, KernelSpec::gaussian(1.0, 1), GridSpec::cube(1, -30.0, 30.0, 0.5));
        let got = smoothed_mpd(&s, &cfg).unwrap();
        let want = naive_mpd(&s, &cfg);
        assert!((got - want).abs() < 1e-10 * want.max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn brute_force_equivalence(seed in 0u64..1000, n in 1usize..10, d in 1usize..3, gamma in prop_oneof![Just(1.0), Just(1.5), Just(2.0)]) {
            let s = random_sample(seed, n, d, 1.5);
            let grid = GridSpec::cube(d, -6.0, 6.0, if d == 1 { 0.1 } else { 0.5 });
            let cfg = MpdConfig::new(gamma, KernelSpec::poly_tail(5.0, 0.8, d), grid);
            let got = smoothed_mpd(&s, &cfg).unwrap();
            let want = naive_mpd(&s, &cfg);
            prop_assert!((got - want).abs() <= 1e-10 * want.max(1.0));
            prop_assert!(got >= 0.0);
        }

        #[test]
        fn permutation_invariant(seed in 0u64..1000) {
            let s = random_sample(seed, 8, 1, 1.0);
            let perm = vec![3, 1, 7, 0, 5, 2, 6, 4];
            let cfg = MpdConfig::new(1.0, spec1(), GridSpec::cube(1, -10.0, 10.0, 0.5));
            let a = smoothed_mpd(&s, &cfg).unwrap();
            let b = smoothed_mpd(&s.permuted(&perm).unwrap(), &cfg).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn translation_equivariant(seed in 0u64..1000, steps in -20i32..20) {
            // Shifts by whole grid steps, so only the truncation changes.
            let s = random_sample(seed, 10, 1, 1.0);
            let moved = s.translated(&[steps as f64 * 0.25]).unwrap();
            let cfg = MpdConfig::new(1.0, spec1(), GridSpec::cube(1, -80.0, 80.0, 0.25));
            let a = smoothed_mpd(&s, &cfg).unwrap();
            let b = smoothed_mpd(&moved, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-3 * a, "{a} vs {b}");
        }
    }
}
