//! Seeded synthetic couplings and the Markov-kernel lift.
//!
//! | id            | pairs                                                        |
//! |---------------|--------------------------------------------------------------|
//! | random_walk   | `X ~ N(0, I)`, `Y = X + Z`, `Z ~ N(0, I)`                    |
//! | hermite       | `X ~ N(0, 1)`, `Y = X + H_k(X) / sqrt(k!)`                   |
//! | shift         | `Y = X + Z + eps`                                            |
//! | cross_dim     | `X = (a, b)`, `Y = (a + b, a + b)` with `a, b ~ N(0, 1)`     |
//! | uniform       | `X, Z ~ U[-1/2, 1/2]^d`, `Y = X + Z`                         |
//! | gauss_markov  | lift of `U' = kappa U + N(0, 1)`                             |
//! | cashflow      | lift of a discounted compound-Poisson cash-flow chain        |
//!
//! The two Markov generators emit `X = (U_t, U_t)` and
//! `Y_i = U_t + v_i(U_{t+1}) - (K v_i)(U_t)` with `v_1(u) = u` and
//! `v_2(u) = max(u, 0)`, which is a martingale pair exactly when `K` is the
//! chain's transition kernel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{MpdError, Result};
use crate::rng::{self, Domain};
use crate::sample::PairedSample;

/// Clipping bound used by the bounded variants when none is given.
pub const DEFAULT_BOUND: f64 = 10.0;

/// Steps discarded before a Markov series is recorded.
const BURN_IN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorId {
    RandomWalk,
    Hermite,
    Shift,
    CrossDim,
    Uniform,
    GaussMarkov,
    Cashflow,
}

impl GeneratorId {
    pub const ALL: [GeneratorId; 7] = [
        Self::RandomWalk,
        Self::Hermite,
        Self::Shift,
        Self::CrossDim,
        Self::Uniform,
        Self::GaussMarkov,
        Self::Cashflow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RandomWalk => "random_walk",
            Self::Hermite => "hermite",
            Self::Shift => "shift",
            Self::CrossDim => "cross_dim",
            Self::Uniform => "uniform",
            Self::GaussMarkov => "gauss_markov",
            Self::Cashflow => "cashflow",
        }
    }
}

impl std::str::FromStr for GeneratorId {
    type Err = MpdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| MpdError::UnknownGenerator(s.to_string()))
    }
}

/// How the Markov lift obtains `(K v_i)(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvMode {
    #[default]
    Exact,
    MonteCarlo,
}

/// Generator parameters. Fields not used by the chosen generator are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    /// Dimension for random_walk, shift and uniform (others have a fixed dimension).
    pub dims: usize,
    /// Hermite order.
    pub k: u32,
    /// Shift size.
    pub epsilon: f64,
    /// Autoregression coefficient of the Gaussian chain.
    pub kappa: f64,
    /// Coefficient assumed by the lifted kernel; defaults to `kappa`.
    pub kernel_kappa: Option<f64>,
    /// Discount rate of the cash-flow chain.
    pub rate: f64,
    /// Jump intensity per unit time.
    pub lambda: f64,
    pub gamma_shape: f64,
    /// Scale (not rate) of the jump-size law.
    pub gamma_scale: f64,
    /// Clip generated values to `[-bound, bound]`.
    pub bounded: bool,
    pub bound: f64,
    pub kv_mode: KvMode,
    /// Inner draws per state when `kv_mode` is Monte Carlo.
    pub inner_draws: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            dims: 1,
            k: 1,
            epsilon: 0.0,
            kappa: 0.5,
            kernel_kappa: None,
            rate: 1.0,
            lambda: 2.0,
            gamma_shape: 2.0,
            gamma_scale: 3.0,
            bounded: false,
            bound: DEFAULT_BOUND,
            kv_mode: KvMode::Exact,
            inner_draws: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: GeneratorId,
    #[serde(default)]
    pub params: GeneratorParams,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(id: GeneratorId, seed: u64) -> Self {
        Self { id, params: GeneratorParams::default(), seed }
    }

    pub fn with_params(id: GeneratorId, params: GeneratorParams, seed: u64) -> Self {
        Self { id, params, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Dimension of the emitted pairs.
    pub fn dim(&self) -> usize {
        match self.id {
            GeneratorId::RandomWalk | GeneratorId::Shift | GeneratorId::Uniform => self.params.dims,
            GeneratorId::Hermite => 1,
            GeneratorId::CrossDim | GeneratorId::GaussMarkov | GeneratorId::Cashflow => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |m: &str| Err(MpdError::Parameter(format!("{}: {m}", self.id.name())));
        if p.dims == 0 {
            return bad("dims must be at least 1");
        }
        if p.bounded && !(p.bound > 0.0) {
            return bad("bound must be positive");
        }
        match self.id {
            GeneratorId::Hermite if p.k > 170 => bad("k! overflows beyond k = 170"),
            GeneratorId::Shift if !p.epsilon.is_finite() => bad("epsilon must be finite"),
            GeneratorId::GaussMarkov if !(p.kappa.abs() < 1.0) => bad("|kappa| must be below 1"),
            GeneratorId::Cashflow
                if !(p.rate > 0.0 && p.lambda >= 0.0 && p.gamma_shape > 0.0 && p.gamma_scale > 0.0) =>
            {
                bad("rate, shape and scale must be positive and lambda non-negative")
            }
            _ if p.kv_mode == KvMode::MonteCarlo && p.inner_draws == 0 => bad("inner_draws must be positive"),
            _ => Ok(()),
        }
    }
}

/// Probabilists' Hermite polynomial `H_k(x)` by the three-term recurrence.
pub fn hermite_polynomial(k: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `H_k(x) / sqrt(k!)`, computed with the normalized recurrence so that large `k` does not overflow.
pub fn normalized_hermite(k: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let jf = j as f64;
        let next = (x * cur - jf.sqrt() * prev) / (jf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

fn clip(v: f64, params: &GeneratorParams) -> f64 {
    if params.bounded {
        v.clamp(-params.bound, params.bound)
    } else {
        v
    }
}

pub fn generate(spec: &GeneratorSpec, n: usize) -> Result<PairedSample> {
    spec.validate()?;
    if n == 0 {
        return Err(MpdError::EmptySample);
    }
    let p = &spec.params;
    let mut r = rng::stream(spec.seed, Domain::Generator, &[]);
    let d = spec.dim();
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n * d);
    match spec.id {
        GeneratorId::RandomWalk | GeneratorId::Shift => {
            let eps = if spec.id == GeneratorId::Shift { p.epsilon } else { 0.0 };
            for _ in 0..n * d {
                let x = clip(rng::standard_normal(&mut r), p);
                let z = clip(rng::standard_normal(&mut r), p);
                xs.push(x);
                ys.push(x + z + eps);
            }
        }
        GeneratorId::Hermite => {
            for _ in 0..n {
                let x = clip(rng::standard_normal(&mut r), p);
                xs.push(x);
                ys.push(x + normalized_hermite(p.k, x));
            }
        }
        GeneratorId::CrossDim => {
            for _ in 0..n {
                let a = clip(rng::standard_normal(&mut r), p);
                let b = clip(rng::standard_normal(&mut r), p);
                xs.extend([a, b]);
                ys.extend([a + b, a + b]);
            }
        }
        GeneratorId::Uniform => {
            for _ in 0..n * d {
                let x = rng::uniform(&mut r, -0.5, 0.5);
                let z = rng::uniform(&mut r, -0.5, 0.5);
                xs.push(x);
                ys.push(x + z);
            }
        }
        GeneratorId::GaussMarkov | GeneratorId::Cashflow => {
            let chain = MarkovChain::from_spec(spec);
            let series = chain.series(n + 1, &mut r);
            let lifted_chain = match spec.id {
                GeneratorId::GaussMarkov => MarkovChain::Gaussian { kappa: p.kernel_kappa.unwrap_or(p.kappa) },
                _ => chain,
            };
            let kv = match p.kv_mode {
                KvMode::Exact => KvSource::Exact(&|i, u| lifted_chain.exact_kv(i, u)),
                KvMode::MonteCarlo => KvSource::MonteCarlo {
                    step: &|u, rr| lifted_chain.step(u, rr),
                    inner_draws: p.inner_draws,
                    seed: rng::derive_seed(spec.seed, &[1]),
                },
            };
            return markov_pair_lift(&series, &DEFAULT_LIFT_FUNCTIONS, kv);
        }
    }
    PairedSample::new(xs, ys, d)
}

/// One-step law of a scalar Markov chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkovChain {
    /// `U' = kappa U + N(0, 1)`.
    Gaussian { kappa: f64 },
    /// `U' = e^-r U + sum_j e^(-r (1 - t_j)) S_j` over Poisson(lambda) jumps at
    /// uniform times `t_j` with Gamma(shape, scale) sizes.
    Cashflow { rate: f64, lambda: f64, shape: f64, scale: f64 },
}

impl MarkovChain {
    pub fn from_spec(spec: &GeneratorSpec) -> Self {
        let p = &spec.params;
        match spec.id {
            GeneratorId::Cashflow => Self::Cashflow {
                rate: p.rate,
                lambda: p.lambda,
                shape: p.gamma_shape,
                scale: p.gamma_scale,
            },
            _ => Self::Gaussian { kappa: p.kappa },
        }
    }

    pub fn step(&self, u: f64, r: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Gaussian { kappa } => kappa * u + rng::standard_normal(r),
            Self::Cashflow { rate, lambda, shape, scale } => {
                let jumps = if lambda > 0.0 {
                    Poisson::new(lambda).expect("validated intensity").sample(r) as u64
                } else {
                    0
                };
                let sizes = Gamma::new(shape, scale).expect("validated shape and scale");
                let mut next = (-rate).exp() * u;
                for _ in 0..jumps {
                    let t: f64 = r.random();
                    next += (-rate * (1.0 - t)).exp() * sizes.sample(r);
                }
                next
            }
        }
    }

    /// Stationary mean, used as the starting state before burn-in.
    fn start(&self) -> f64 {
        match *self {
            Self::Gaussian { .. } => 0.0,
            Self::Cashflow { rate, lambda, shape, scale } => lambda * shape * scale / rate,
        }
    }

    pub fn series(&self, len: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        let mut u = self.start();
        for _ in 0..BURN_IN {
            u = self.step(u, r);
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(u);
            u = self.step(u, r);
        }
        out
    }

    /// `(K v_i)(u)` in closed form for `v_1(u) = u` (i = 0) and `v_2(u) = max(u, 0)` (i = 1).
    pub fn exact_kv(&self, i: usize, u: f64) -> f64 {
        match *self {
            Self::Gaussian { kappa } => {
                let m = kappa * u;
                if i == 0 {
                    m
                } else {
                    let z = Normal::standard();
                    m * z.cdf(m) + z.pdf(m)
                }
            }
            // The state never leaves [0, inf) from a non-negative start, so v_2 = v_1 there.
            Self::Cashflow { rate, lambda, shape, scale } => {
                (-rate).exp() * u + lambda * shape * scale * (1.0 - (-rate).exp()) / rate
            }
        }
    }
}

pub type LiftFunction = fn(f64) -> f64;

fn identity(u: f64) -> f64 {
    u
}

fn positive_part(u: f64) -> f64 {
    u.max(0.0)
}

/// `v_1(u) = u`, `v_2(u) = max(u, 0)`.
pub const DEFAULT_LIFT_FUNCTIONS: [LiftFunction; 2] = [identity, positive_part];

/// Source of `(K v_i)(u)` for the lift.
pub enum KvSource<'a> {
    /// Closed form, called as `kv(i, u)`.
    Exact(&'a dyn Fn(usize, f64) -> f64),
    /// Average of `v_i` over `inner_draws` one-step draws from state `u`.
    MonteCarlo {
        step: &'a dyn Fn(f64, &mut ChaCha8Rng) -> f64,
        inner_draws: usize,
        seed: u64,
    },
}

/// Lifts a scalar series to `len - 1` pairs in `R^d x R^d`, `d = v_fns.len()`.
pub fn markov_pair_lift(series: &[f64], v_fns: &[LiftFunction], kv: KvSource) -> Result<PairedSample> {
    if series.len() < 2 {
        return Err(MpdError::Parameter("the series needs at least two states".into()));
    }
    let d = v_fns.len();
    if d == 0 {
        return Err(MpdError::Parameter("at least one lift function is required".into()));
    }
    let n = series.len() - 1;
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n * d);
    let mut kv_values = vec![0.0; d];
    for t in 0..n {
        let (u, next) = (series[t], series[t + 1]);
        match &kv {
            KvSource::Exact(f) => {
                for (i, slot) in kv_values.iter_mut().enumerate() {
                    *slot = f(i, u);
                }
            }
            KvSource::MonteCarlo { step, inner_draws, seed } => {
                let mut r = rng::stream(*seed, Domain::MarkovInner, &[t as u64]);
                kv_values.fill(0.0);
                for _ in 0..*inner_draws {
                    let v = step(u, &mut r);
                    for (slot, f) in kv_values.iter_mut().zip(v_fns) {
                        *slot += f(v);
                    }
                }
                for slot in &mut kv_values {
                    *slot /= *inner_draws as f64;
                }
            }
        }
        for (i, f) in v_fns.iter().enumerate() {
            xs.push(u);
            ys.push(u + f(next) - kv_values[i]);
        }
    }
    PairedSample::new(xs, ys, d)
}
