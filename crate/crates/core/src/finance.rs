//! Heston simulation, Monte-Carlo option pricing and the no-arbitrage audit.
//!
//! The audit pairs a pricer's value of a European call at time `t` with the
//! discounted payoff realized later on the same path. Under the pricing
//! measure the pair is a martingale coupling exactly when the pricer is
//! consistent with the model, so the martingale-pair test doubles as a
//! pricing check.
//!
//! Discretization: log-price and variance are stepped with a tamed Euler
//! scheme (drift increment `b dt` replaced by `b dt / (1 + |b| dt)`) and full
//! truncation (`max(V, 0)` wherever the variance enters a drift or a square
//! root).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{MpdError, Result};
use crate::grid::GridSpec;
use crate::kernel::{KernelFamily, KernelSpec};
use crate::rng::{self, Domain};
use crate::sample::PairedSample;

pub const DEFAULT_STEPS_PER_UNIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    /// Initial stock price.
    pub x0: f64,
    /// Interest rate per unit time.
    pub r: f64,
    /// Initial variance.
    pub v0: f64,
    /// Mean-reversion speed of the variance.
    pub kappa: f64,
    /// Long-run variance.
    pub mu: f64,
    /// Volatility of the variance.
    pub eta: f64,
    /// Correlation of the price and variance drivers.
    pub corr: f64,
}

impl Default for HestonParams {
    fn default() -> Self {
        Self { x0: 1.0, r: 0.025, v0: 0.04, kappa: 0.78, mu: 0.11, eta: 0.68, corr: 0.044 }
    }
}

impl HestonParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x0 > 0.0
            && self.r.is_finite()
            && self.v0 >= 0.0
            && self.kappa > 0.0
            && self.mu >= 0.0
            && self.eta >= 0.0
            && (-1.0..=1.0).contains(&self.corr)
            && [self.x0, self.v0, self.kappa, self.mu, self.eta].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(MpdError::Parameter(format!("invalid Heston parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
}

impl OptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strike >= 0.0 && self.maturity > 0.0 && self.strike.is_finite() && self.maturity.is_finite() {
            Ok(())
        } else {
            Err(MpdError::Parameter(format!("invalid option {self:?}")))
        }
    }
}

/// Simulated paths, row-major `n_paths x (n_steps + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HestonPaths {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl HestonPaths {
    pub fn price(&self, path: usize, step: usize) -> f64 {
        self.s[path * (self.n_steps + 1) + step]
    }

    pub fn variance(&self, path: usize, step: usize) -> f64 {
        self.v[path * (self.n_steps + 1) + step]
    }
}

/// Model state: log-price and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonState {
    pub log_s: f64,
    pub v: f64,
}

struct Scheme {
    r: f64,
    kappa: f64,
    mu: f64,
    eta: f64,
    corr: f64,
    corr_perp: f64,
    dt: f64,
    sqrt_dt: f64,
}

#[inline]
fn tamed(b: f64, dt: f64) -> f64 {
    b * dt / (1.0 + b.abs() * dt)
}

impl Scheme {
    fn new(p: &HestonParams, steps_per_unit: usize) -> Self {
        let dt = 1.0 / steps_per_unit as f64;
        Self {
            r: p.r,
            kappa: p.kappa,
            mu: p.mu,
            eta: p.eta,
            corr: p.corr,
            corr_perp: (1.0 - p.corr * p.corr).max(0.0).sqrt(),
            dt,
            sqrt_dt: dt.sqrt(),
        }
    }

    #[inline]
    fn step(&self, st: &mut HestonState, z1: f64, z2: f64) {
        let vp = st.v.max(0.0);
        let vol = (vp).sqrt() * self.sqrt_dt;
        st.log_s += tamed(self.r - 0.5 * vp, self.dt) + vol * z1;
        st.v += tamed(self.kappa * (self.mu - vp), self.dt) + self.eta * vol * (self.corr * z1 + self.corr_perp * z2);
    }

    #[inline]
    fn advance<R: rand::RngCore>(&self, st: &mut HestonState, steps: usize, r: &mut R) {
        for _ in 0..steps {
            let z1 = rng::standard_normal(r);
            let z2 = rng::standard_normal(r);
            self.step(st, z1, z2);
        }
    }
}

fn steps_for(time: f64, steps_per_unit: usize, what: &str) -> Result<usize> {
    let exact = time * steps_per_unit as f64;
    let rounded = exact.round();
    if !(time >= 0.0) || (exact - rounded).abs() > 1e-9 * exact.max(1.0) {
        return Err(MpdError::Parameter(format!(
            "{what} = {time} is not a non-negative multiple of the step 1/{steps_per_unit}"
        )));
    }
    Ok(rounded as usize)
}

pub fn simulate_heston(params: &HestonParams, horizon: f64, steps_per_unit: usize, n_paths: usize, seed: u64) -> Result<HestonPaths> {
    params.validate()?;
    if steps_per_unit == 0 || n_paths == 0 {
        return Err(MpdError::Parameter("steps per unit and path count must be positive".into()));
    }
    let n_steps = steps_for(horizon, steps_per_unit, "horizon")?;
    let scheme = Scheme::new(params, steps_per_unit);
    let width = n_steps + 1;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(seed, Domain::Heston, &[p as u64]);
            let mut st = HestonState { log_s: params.x0.ln(), v: params.v0 };
            let mut s = Vec::with_capacity(width);
            let mut v = Vec::with_capacity(width);
            s.push(params.x0);
            v.push(params.v0);
            for _ in 0..n_steps {
                scheme.advance(&mut st, 1, &mut r);
                s.push(st.log_s.exp());
                v.push(st.v);
            }
            (s, v)
        })
        .collect();
    let mut s = Vec::with_capacity(n_paths * width);
    let mut v = Vec::with_capacity(n_paths * width);
    for (a, b) in rows {
        s.extend(a);
        v.extend(b);
    }
    Ok(HestonPaths { n_paths, n_steps, dt: scheme.dt, s, v })
}

/// Discounted call payoffs over `n_inner` paths restarted from `state`.
/// Inner path `j` uses the stream keyed by `(outer, j)`.
fn inner_payoffs(scheme: &Scheme, state: HestonState, steps: usize, strike: f64, n_inner: usize, seed: u64, outer: u64) -> Vec<f64> {
    let discount = (-scheme.r * steps as f64 * scheme.dt).exp();
    (0..n_inner)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(seed, Domain::HestonInner, &[outer, j as u64]);
            let mut st = state;
            scheme.advance(&mut st, steps, &mut r);
            discount * (st.log_s.exp() - strike).max(0.0)
        })
        .collect()
}

fn inner_price(scheme: &Scheme, state: HestonState, steps: usize, strike: f64, n_inner: usize, seed: u64, outer: u64) -> f64 {
    inner_payoffs(scheme, state, steps, strike, n_inner, seed, outer).iter().sum::<f64>() / n_inner as f64
}

/// Per-path discounted payoffs behind [`price_option_mc`], for error bars.
#[allow(clippy::too_many_arguments)]
pub fn discounted_payoffs(
    params: &HestonParams,
    s_t: f64,
    v_t: f64,
    t: f64,
    option: &OptionSpec,
    steps_per_unit: usize,
    n_inner: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    option.validate()?;
    if !(t < option.maturity) {
        return Err(MpdError::Parameter(format!("t = {t} must be before maturity {}", option.maturity)));
    }
    if !(s_t > 0.0) || n_inner == 0 || steps_per_unit == 0 {
        return Err(MpdError::Parameter("need s_t > 0, n_inner >= 1 and steps per unit >= 1".into()));
    }
    let remaining = steps_for(option.maturity, steps_per_unit, "maturity")? - steps_for(t, steps_per_unit, "t")?;
    let scheme = Scheme::new(params, steps_per_unit);
    Ok(inner_payoffs(&scheme, HestonState { log_s: s_t.ln(), v: v_t }, remaining, option.strike, n_inner, seed, 0))
}

/// Monte-Carlo price at time `t` of the call `option`, from state `(s_t, v_t)`.
#[allow(clippy::too_many_arguments)]
pub fn price_option_mc(
    params: &HestonParams,
    s_t: f64,
    v_t: f64,
    t: f64,
    option: &OptionSpec,
    steps_per_unit: usize,
    n_inner: usize,
    seed: u64,
) -> Result<f64> {
    let payoffs = discounted_payoffs(params, s_t, v_t, t, option, steps_per_unit, n_inner, seed)?;
    Ok(payoffs.iter().sum::<f64>() / n_inner as f64)
}

/// Black–Scholes call price.
pub fn black_scholes_call(s: f64, strike: f64, rate: f64, vol: f64, tau: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 {
        return (s - strike * (-rate * tau).exp()).max(0.0);
    }
    let sd = vol * tau.sqrt();
    let d1 = ((s / strike).ln() + (rate + 0.5 * vol * vol) * tau) / sd;
    let z = Normal::standard();
    s * z.cdf(d1) - strike * (-rate * tau).exp() * z.cdf(d1 - sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pricer {
    /// Monte-Carlo Heston price from the path's own state.
    HestonConsistent,
    /// Black–Scholes with a fixed volatility, ignoring the model.
    MisspecifiedBs { vol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub params: HestonParams,
    pub option: OptionSpec,
    /// Pricing date.
    pub t: f64,
    pub steps_per_unit: usize,
    pub n_paths: usize,
    pub n_inner: usize,
    pub pricer: Pricer,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            params: HestonParams::default(),
            option: OptionSpec { strike: 1.0, maturity: 1.0 },
            t: 0.5,
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            n_paths: 4000,
            n_inner: 1000,
            pricer: Pricer::HestonConsistent,
            seed: 0,
        }
    }
}

/// Pairs `(price at t, discounted payoff)` along `n_paths` outer paths.
pub fn build_audit_pairs(cfg: &AuditConfig) -> Result<PairedSample> {
    cfg.params.validate()?;
    cfg.option.validate()?;
    if !(cfg.t < cfg.option.maturity) {
        return Err(MpdError::Parameter(format!("t = {} must be before maturity {}", cfg.t, cfg.option.maturity)));
    }
    if cfg.n_paths == 0 || cfg.n_inner == 0 || cfg.steps_per_unit == 0 {
        return Err(MpdError::Parameter("paths, inner paths and steps per unit must be positive".into()));
    }
    if let Pricer::MisspecifiedBs { vol } = cfg.pricer {
        if !(vol > 0.0) {
            return Err(MpdError::Parameter("Black–Scholes volatility must be positive".into()));
        }
    }
    let total = steps_for(cfg.option.maturity, cfg.steps_per_unit, "maturity")?;
    let before = steps_for(cfg.t, cfg.steps_per_unit, "t")?;
    let after = total - before;
    let scheme = Scheme::new(&cfg.params, cfg.steps_per_unit);
    let discount = (-cfg.params.r * after as f64 * scheme.dt).exp();
    let pairs: Vec<(f64, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(cfg.seed, Domain::Heston, &[p as u64]);
            let mut st = HestonState { log_s: cfg.params.x0.ln(), v: cfg.params.v0 };
            scheme.advance(&mut st, before, &mut r);
            let at_t = st;
            let price = match cfg.pricer {
                Pricer::HestonConsistent => {
                    inner_price(&scheme, at_t, after, cfg.option.strike, cfg.n_inner, cfg.seed, p as u64)
                }
                Pricer::MisspecifiedBs { vol } => black_scholes_call(
                    at_t.log_s.exp(),
                    cfg.option.strike,
                    cfg.params.r,
                    vol,
                    after as f64 * scheme.dt,
                ),
            };
            scheme.advance(&mut st, after, &mut r);
            let payoff = discount * (st.log_s.exp() - cfg.option.strike).max(0.0);
            (price, payoff)
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    PairedSample::from_1d(xs, ys)
}

/// `sum_j sum_i integral (|X_ij - Y_ij| f(x - Y_ij))^2 dx` by grid quadrature.
pub fn calibration_loss(pairs_by_option: &[PairedSample], kernel: &KernelSpec, grid: &GridSpec) -> Result<f64> {
    if kernel.family != KernelFamily::PolyTail {
        return Err(MpdError::Unsupported("the calibration loss uses the poly_tail family".into()));
    }
    kernel.validate()?;
    grid.validate(crate::grid::DEFAULT_NODE_CAP)?;
    if grid.dim() != kernel.dim {
        return Err(MpdError::Shape("grid and kernel dimensions differ".into()));
    }
    let k = kernel.prepare()?;
    let nodes = grid.nodes();
    let d = kernel.dim;
    let mut total = 0.0;
    for sample in pairs_by_option {
        if sample.dim() != d {
            return Err(MpdError::Shape("pairs and kernel dimensions differ".into()));
        }
        let per_pair: Vec<f64> = (0..sample.len())
            .into_par_iter()
            .map(|i| {
                let gap2: f64 = sample.x(i).iter().zip(sample.y(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                if gap2 == 0.0 {
                    return 0.0;
                }
                let mass: f64 = nodes.chunks_exact(d).map(|x| k.at_diff(x, sample.y(i)).powi(2)).sum();
                gap2 * mass
            })
            .collect();
        total += per_pair.iter().sum::<f64>();
    }
    Ok(total * grid.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn frozen_variance_without_vol_of_vol() {
        let p = HestonParams { eta: 0.0, v0: 0.11, ..HestonParams::default() };
        let paths = simulate_heston(&p, 1.0, 100, 20, 1).unwrap();
        assert!(paths.v.iter().all(|v| *v == 0.11));
        assert_eq!(paths.price(3, 0), 1.0);
    }

    #[test]
    fn discounted_price_is_a_martingale() {
        let p = HestonParams::default();
        let paths = simulate_heston(&p, 1.0, 100, 100_000, 2).unwrap();
        for step in [25, 50, 100] {
            let t = step as f64 * paths.dt;
            let vals: Vec<f64> = (0..paths.n_paths).map(|i| (-p.r * t).exp() * paths.price(i, step)).collect();
            let (m, se) = mean_se(&vals);
            assert!((m - p.x0).abs() < 3.0 * se, "step {step}: {m} +- {se}");
        }
        let zero_rate = HestonParams { r: 0.0, ..p };
        let paths = simulate_heston(&zero_rate, 1.0, 100, 100_000, 3).unwrap();
        let terminal: Vec<f64> = (0..paths.n_paths).map(|i| paths.price(i, 100)).collect();
        let (m, se) = mean_se(&terminal);
        assert!((m - 1.0).abs() < 3.0 * se, "{m} +- {se}");
    }

    #[test]
    fn pricer_limits() {
        let p = HestonParams::default();
        let zero_strike = OptionSpec { strike: 0.0, maturity: 1.0 };
        let n = 20_000;
        let scheme = Scheme::new(&p, 100);
        let state = HestonState { log_s: 1.2f64.ln(), v: 0.05 };
        let payoffs: Vec<f64> = (0..n)
            .map(|j| {
                let mut r = rng::stream(4, Domain::HestonInner, &[0, j as u64]);
                let mut st = state;
                scheme.advance(&mut st, 50, &mut r);
                (-p.r * 0.5).exp() * st.log_s.exp()
            })
            .collect();
        let (m, se) = mean_se(&payoffs);
        let price = price_option_mc(&p, 1.2, 0.05, 0.5, &zero_strike, 100, n, 4).unwrap();
        assert!((price - m).abs() < 1e-12);
        assert!((price - 1.2).abs() < 3.0 * se, "{price} +- {se}");
        let far = OptionSpec { strike: 1.2e6, maturity: 1.0 };
        assert_eq!(price_option_mc(&p, 1.2, 0.05, 0.5, &far, 100, 1000, 4).unwrap(), 0.0);
        assert!(price_option_mc(&p, 1.2, 0.05, 1.0, &far, 100, 10, 4).is_err());
    }

    #[test]
    fn deterministic_variance_matches_black_scholes() {
        let p = HestonParams { eta: 0.0, mu: 0.04, v0: 0.04, ..HestonParams::default() };
        let option = OptionSpec { strike: 1.0, maturity: 1.0 };
        let n = 100_000;
        let scheme = Scheme::new(&p, 100);
        let payoffs: Vec<f64> = (0..n)
            .map(|j| {
                let mut r = rng::stream(5, Domain::HestonInner, &[0, j as u64]);
                let mut st = HestonState { log_s: 0.0, v: 0.04 };
                scheme.advance(&mut st, 100, &mut r);
                (-p.r).exp() * (st.log_s.exp() - 1.0).max(0.0)
            })
            .collect();
        let (_, se) = mean_se(&payoffs);
        let mc = price_option_mc(&p, 1.0, 0.04, 0.0, &option, 100, n, 5).unwrap();
        let bs = black_scholes_call(1.0, 1.0, p.r, 0.2, 1.0);
        assert!((mc - bs).abs() < 3.0 * se, "{mc} vs {bs} (se {se})");
    }

    #[test]
    fn price_monotone_in_strike_and_maturity() {
        let p = HestonParams::default();
        let price = |k: f64, t_mat: f64| {
            price_option_mc(&p, 1.0, 0.04, 0.0, &OptionSpec { strike: k, maturity: t_mat }, 100, 20_000, 6).unwrap()
        };
        // Common random numbers make the comparisons sharp.
        assert!(price(0.9, 1.0) > price(1.0, 1.0));
        assert!(price(1.0, 1.0) > price(1.1, 1.0));
        assert!(price(1.0, 0.5) < price(1.0, 1.0));
    }

    #[test]
    fn zero_variance_audit_pairs_coincide() {
        let cfg = AuditConfig {
            params: HestonParams { v0: 0.0, mu: 0.0, eta: 0.0, ..HestonParams::default() },
            n_paths: 50,
            n_inner: 20,
            ..AuditConfig::default()
        };
        let s = build_audit_pairs(&cfg).unwrap();
        for i in 0..s.len() {
            assert!((s.x(i)[0] - s.y(i)[0]).abs() <= 1e-12, "{} vs {}", s.x(i)[0], s.y(i)[0]);
        }
        let stat = crate::estimator::test_statistic(&s, &crate::estimator::MpdConfig::default_for(1)).unwrap();
        assert!(stat < 1e-10, "{stat}");
    }

    #[test]
    fn audit_is_deterministic() {
        let cfg = AuditConfig { n_paths: 30, n_inner: 10, seed: 9, ..AuditConfig::default() };
        assert_eq!(build_audit_pairs(&cfg).unwrap(), build_audit_pairs(&cfg).unwrap());
        let bs = AuditConfig { pricer: Pricer::MisspecifiedBs { vol: 0.6 }, ..cfg.clone() };
        let a = build_audit_pairs(&cfg).unwrap();
        let b = build_audit_pairs(&bs).unwrap();
        assert_eq!(a.ys(), b.ys());
        assert_ne!(a.xs(), b.xs());
    }

    #[test]
    fn black_scholes_reference_value() {
        // S = K = 1, r = 0.025, vol = 0.2, tau = 1.
        let v = black_scholes_call(1.0, 1.0, 0.025, 0.2, 1.0);
        assert!((v - 0.0916291110108648).abs() < 1e-12, "{v}");
    }

    #[test]
    fn calibration_loss_examples() {
        let k = KernelSpec::poly_tail(5.0, 1.0, 1);
        let grid = GridSpec::cube(1, -200.0, 200.0, 0.01);
        let same = PairedSample::from_1d(vec![0.3, 1.0], vec![0.3, 1.0]).unwrap();
        assert_eq!(calibration_loss(&[same], &k, &grid).unwrap(), 0.0);
        let c = 0.7;
        let one = PairedSample::from_1d(vec![c + 0.25], vec![0.25]).unwrap();
        let loss = calibration_loss(std::slice::from_ref(&one), &k, &grid).unwrap();
        // Oracle: |f|_2^2 by Simpson on each half-line of 4 (1 + u)^-10.
        let half = {
            let (steps, b) = (200_000, 400.0);
            let h = b / steps as f64;
            let g = |u: f64| 4.0 * (1.0 + u).powi(-10);
            let mut acc = g(0.0) + g(b);
            for i in 1..steps {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
            }
            acc * h / 3.0
        };
        assert!((2.0 * half - 8.0 / 9.0).abs() < 1e-9);
        // Grid quadrature across the kernel cusp is second order in the step.
        assert!((loss / (c * c * 8.0 / 9.0) - 1.0).abs() < 1e-3, "{loss}");
        let doubled = PairedSample::from_1d(vec![2.0 * c + 0.25], vec![0.25]).unwrap();
        let loss2 = calibration_loss(&[doubled], &k, &grid).unwrap();
        assert!((loss2 / loss - 4.0).abs() < 1e-9);
    }
}
