//! Monte-Carlo simulation of the null limit of the test statistic.
//!
//! Under the null the scaled statistic converges to
//! `2^(1-gamma) * integral |G_x|^gamma / m(x)^(gamma-1) dx`, where `G` is a
//! centred Gaussian field with covariance
//! `E[(Y - X)(Y - X)^T f(x - X) f(y - X)]` and `m` is the density of the
//! smoothed X. Both are estimated from a covariance sample; `m` is replaced
//! by the smoothed empirical density.
//!
//! Two samplers are provided. The multiplier sampler draws
//! `G_x = n^(-1/2) sum zeta_i (Y_i - X_i) f(x - X_i)` with i.i.d. standard
//! normal `zeta`, which has exactly the empirical covariance and needs no
//! dense matrix; the draws for a batch are one matrix product. The Cholesky
//! sampler assembles the dense covariance over the grid and factors it; it is
//! meant for small grids and as a cross-check.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MpdError, Result};
use crate::estimator::{FieldEvaluator, MpdConfig, UNDERFLOW_GUARD};
use crate::grid::GridSpec;
use crate::kernel::{KernelFamily, KernelSpec};
use crate::rng::{self, Domain};
use crate::sample::PairedSample;

/// Largest `nodes * dim` accepted by the dense Cholesky sampler.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Relative jitter added to every eigenvalue during PSD repair.
pub const PSD_JITTER: f64 = 1e-10;

pub const LIMIT_FORMAT_VERSION: &str = "1";

/// Nodes per matrix-product block in the multiplier sampler.
const GEMM_NODES: usize = 128;

/// Upper bound on the doubles held by one multiplier matrix or one product block.
const BLOCK_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMethod {
    Cholesky,
    #[default]
    Multiplier,
}

impl std::str::FromStr for LimitMethod {
    type Err = MpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(Self::Cholesky),
            "multiplier" => Ok(Self::Multiplier),
            other => Err(MpdError::Parameter(format!("unknown limit method '{other}'"))),
        }
    }
}

/// Seeded draws of the limit variable with everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitDistribution {
    pub format_version: String,
    pub method: LimitMethod,
    pub seed: u64,
    pub n_sims: usize,
    pub gamma: f64,
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    /// SHA-256 of the covariance sample.
    pub source_sample_digest: String,
    pub source_sample_size: usize,
    /// The density in the `gamma > 1` weight is the smoothed empirical
    /// density of the covariance sample.
    pub density_weight: String,
    pub draws: Vec<f64>,
}

impl LimitDistribution {
    pub fn mean(&self) -> f64 {
        limit_mean(self)
    }

    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        critical_value(self, alpha)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ld: Self = serde_json::from_reader(file)?;
        if ld.draws.len() != ld.n_sims || ld.draws.iter().any(|v| !(*v >= 0.0)) {
            return Err(MpdError::Parameter(format!(
                "{} does not hold {} non-negative draws",
                path.display(),
                ld.n_sims
            )));
        }
        Ok(ld)
    }
}

/// `E_n[(Y - X)(Y - X)^T f(x - X) f(y - X)]` as a `d x d` matrix.
pub fn field_covariance(x: &[f64], y: &[f64], sample: &PairedSample, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let eval = FieldEvaluator::new(sample, kernel)?;
    let d = eval.dim();
    if x.len() != d || y.len() != d {
        return Err(MpdError::Shape("points must match the sample dimension".into()));
    }
    let n = eval.len();
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    eval.kernel_row(x, &mut fx);
    eval.kernel_row(y, &mut fy);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let w = fx[i] * fy[i];
        let di = &eval.diffs[i * d..(i + 1) * d];
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += di[a] * di[b] * w;
            }
        }
    }
    Ok(cov / n as f64)
}

/// Dense covariance of the field stacked over `points` (row-major `k x d`),
/// ordered point-major: entry `(a*d + j, c*d + l)`.
fn stacked_covariance(eval: &FieldEvaluator, points: &[f64]) -> DMatrix<f64> {
    let d = eval.dim();
    let n = eval.len();
    let k = points.len() / d;
    let mut a = DMatrix::zeros(k * d, n);
    let mut row = vec![0.0; n];
    for (p, x) in points.chunks_exact(d).enumerate() {
        eval.kernel_row(x, &mut row);
        for (i, w) in row.iter().enumerate() {
            for j in 0..d {
                a[(p * d + j, i)] = eval.diffs[i * d + j] * w;
            }
        }
    }
    (&a * a.transpose()) / n as f64
}

/// Symmetrizes, clips negative eigenvalues to zero and adds `PSD_JITTER * trace`
/// to every eigenvalue. Returns the repaired matrix, the jitter used and the
/// smallest eigenvalue before repair.
pub fn repair_psd(cov: &DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
    let sym = (cov + cov.transpose()) * 0.5;
    let jitter = PSD_JITTER * sym.trace().max(0.0);
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0) + jitter);
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    ((&repaired + repaired.transpose()) * 0.5, jitter, min_eig)
}

/// Lower Cholesky factor of the repaired covariance.
fn cholesky_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (repaired, jitter, min_eig) = repair_psd(cov);
    if jitter == 0.0 {
        // Zero field: every draw is zero.
        return Ok(DMatrix::zeros(cov.nrows(), cov.ncols()));
    }
    repaired
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| {
            MpdError::Numerical(format!(
                "cholesky factorization failed after PSD repair (most negative eigenvalue {min_eig:e})"
            ))
        })
}

/// Per-node weights `p(x)^(1-gamma)`; nodes whose density underflows carry no mass.
fn node_weights(eval: &FieldEvaluator, grid: &GridSpec, gamma: f64) -> Vec<f64> {
    if gamma == 1.0 {
        return vec![1.0; grid.node_count()];
    }
    eval.density_on_grid(grid)
        .into_iter()
        .map(|p| if p >= UNDERFLOW_GUARD { p.powf(1.0 - gamma) } else { 0.0 })
        .collect()
}

#[inline]
fn powered_norm(v: &[f64], gamma: f64) -> f64 {
    let sq: f64 = v.iter().map(|a| a * a).sum();
    if gamma == 1.0 {
        sq.sqrt()
    } else if gamma == 2.0 {
        sq
    } else {
        sq.powf(gamma / 2.0)
    }
}

/// Multiplier matrix for draws `first..first + count`: row `i` holds
/// `zeta_{b,i} (Y_i - X_i) / sqrt(n)` in columns `b*d..(b+1)*d`.
fn multiplier_matrix(eval: &FieldEvaluator, seed: u64, first: usize, count: usize) -> Vec<f64> {
    let n = eval.len();
    let d = eval.dim();
    let width = count * d;
    let scale = 1.0 / (n as f64).sqrt();
    let mut w = vec![0.0; n * width];
    let mut zeta = vec![0.0; n];
    for b in 0..count {
        let mut r = rng::stream(seed, Domain::LimitDraw, &[(first + b) as u64]);
        rng::fill_normal(&mut r, &mut zeta);
        for i in 0..n {
            let z = zeta[i] * scale;
            for j in 0..d {
                w[i * width + b * d + j] = z * eval.diffs[i * d + j];
            }
        }
    }
    w
}

/// `out (k x width) = F (k x n) * W (n x width)` where row `a` of `F` holds `f(node_a - X_i)`.
fn field_block(eval: &FieldEvaluator, nodes: &[f64], w: &[f64], width: usize, out: &mut [f64]) {
    let d = eval.dim();
    let n = eval.len();
    let k = nodes.len() / d;
    let mut f = vec![0.0; k * n];
    for (row, x) in f.chunks_exact_mut(n).zip(nodes.chunks_exact(d)) {
        eval.kernel_row(x, row);
    }
    // SAFETY: the slices have exactly the sizes described by the row/column strides.
    unsafe {
        matrixmultiply::dgemm(
            k,
            n,
            width,
            1.0,
            f.as_ptr(),
            n as isize,
            1,
            w.as_ptr(),
            width as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            width as isize,
            1,
        );
    }
}

fn draws_per_batch(n: usize, d: usize, n_sims: usize) -> usize {
    (BLOCK_BUDGET / (n * d).max(1))
        .min(BLOCK_BUDGET / (GEMM_NODES * d))
        .clamp(1, n_sims.max(1))
}

fn multiplier_draws(eval: &FieldEvaluator, grid: &GridSpec, weights: &[f64], gamma: f64, n_sims: usize, seed: u64) -> Vec<f64> {
    let d = eval.dim();
    let m = grid.node_count();
    let counts = grid.axis_counts();
    let batch = draws_per_batch(eval.len(), d, n_sims);
    let mut sums = Vec::with_capacity(n_sims);
    let mut first = 0;
    while first < n_sims {
        let count = batch.min(n_sims - first);
        let width = count * d;
        let w = multiplier_matrix(eval, seed, first, count);
        let blocks = m.div_ceil(GEMM_NODES);
        let partials: Vec<Vec<f64>> = (0..blocks)
            .into_par_iter()
            .map(|blk| {
                let lo = blk * GEMM_NODES;
                let hi = (lo + GEMM_NODES).min(m);
                let mut nodes = vec![0.0; (hi - lo) * d];
                for (k, x) in nodes.chunks_exact_mut(d).enumerate() {
                    grid.node_into(&counts, lo + k, x);
                }
                let mut g = vec![0.0; (hi - lo) * width];
                field_block(eval, &nodes, &w, width, &mut g);
                let mut acc = vec![0.0; count];
                for (k, row) in g.chunks_exact(width).enumerate() {
                    let wt = weights[lo + k];
                    if wt == 0.0 {
                        continue;
                    }
                    for (b, slot) in acc.iter_mut().enumerate() {
                        *slot += wt * powered_norm(&row[b * d..(b + 1) * d], gamma);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; count];
        for part in &partials {
            for (t, v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        sums.extend(total);
        first += count;
    }
    sums
}

fn cholesky_draws(eval: &FieldEvaluator, grid: &GridSpec, weights: &[f64], gamma: f64, n_sims: usize, seed: u64) -> Result<Vec<f64>> {
    let d = eval.dim();
    let nodes = grid.nodes();
    let factor = cholesky_factor(&stacked_covariance(eval, &nodes))?;
    let dim = factor.nrows();
    Ok((0..n_sims)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, Domain::LimitDraw, &[b as u64]);
            let mut z = vec![0.0; dim];
            rng::fill_normal(&mut r, &mut z);
            let g = &factor * DVector::from_vec(z);
            g.as_slice()
                .chunks_exact(d)
                .zip(weights)
                .map(|(v, wt)| if *wt == 0.0 { 0.0 } else { wt * powered_norm(v, gamma) })
                .sum::<f64>()
        })
        .collect())
}

/// Draws the limit variable `n_sims` times, using `sample` to estimate the field covariance.
pub fn simulate_limit(sample: &PairedSample, cfg: &MpdConfig, n_sims: usize, method: LimitMethod, seed: u64) -> Result<LimitDistribution> {
    simulate_limit_with_cap(sample, cfg, n_sims, method, seed, DEFAULT_DENSE_CAP)
}

pub fn simulate_limit_with_cap(
    sample: &PairedSample,
    cfg: &MpdConfig,
    n_sims: usize,
    method: LimitMethod,
    seed: u64,
    dense_cap: usize,
) -> Result<LimitDistribution> {
    cfg.check_sample(sample)?;
    if n_sims == 0 {
        return Err(MpdError::Parameter("n_sims must be positive".into()));
    }
    let eval = FieldEvaluator::new(sample, &cfg.kernel)?;
    let weights = node_weights(&eval, &cfg.grid, cfg.gamma);
    let sums = match method {
        LimitMethod::Multiplier => multiplier_draws(&eval, &cfg.grid, &weights, cfg.gamma, n_sims, seed),
        LimitMethod::Cholesky => {
            let size = cfg.grid.node_count() * sample.dim();
            if size > dense_cap {
                return Err(MpdError::Parameter(format!(
                    "dense covariance of size {size} exceeds the cap of {dense_cap}; use the multiplier method"
                )));
            }
            cholesky_draws(&eval, &cfg.grid, &weights, cfg.gamma, n_sims, seed)?
        }
    };
    let scale = 2f64.powf(1.0 - cfg.gamma) * cfg.grid.cell_volume();
    Ok(LimitDistribution {
        format_version: LIMIT_FORMAT_VERSION.into(),
        method,
        seed,
        n_sims,
        gamma: cfg.gamma,
        kernel: cfg.kernel.clone(),
        grid: cfg.grid.clone(),
        source_sample_digest: sample.digest(),
        source_sample_size: sample.len(),
        density_weight: "plug_in_smoothed_density".into(),
        draws: sums.into_iter().map(|s| s * scale).collect(),
    })
}

/// Key identifying a limit simulation: format version, covariance sample,
/// configuration, draw count, method and seed, hashed with SHA-256.
pub fn cache_key(sample: &PairedSample, cfg: &MpdConfig, n_sims: usize, method: LimitMethod, seed: u64) -> Result<String> {
    let payload = serde_json::to_vec(&(LIMIT_FORMAT_VERSION, sample.digest(), cfg, n_sims, method, seed))?;
    Ok(hex::encode(Sha256::digest(&payload)))
}

/// Draws of the field at `points` (row-major `k x d`); returns `n_draws x (k*d)` row-major.
pub fn simulate_field(
    sample: &PairedSample,
    kernel: &KernelSpec,
    points: &[f64],
    n_draws: usize,
    method: LimitMethod,
    seed: u64,
) -> Result<Vec<f64>> {
    let eval = FieldEvaluator::new(sample, kernel)?;
    let d = eval.dim();
    if points.is_empty() || !points.len().is_multiple_of(d) {
        return Err(MpdError::Shape("points must be a non-empty k x d matrix".into()));
    }
    let width = points.len();
    match method {
        LimitMethod::Multiplier => {
            let w = multiplier_matrix(&eval, seed, 0, n_draws);
            let k = points.len() / d;
            let mut g = vec![0.0; k * n_draws * d];
            field_block(&eval, points, &w, n_draws * d, &mut g);
            // Reorder from (point, draw, coord) to (draw, point, coord).
            let mut out = vec![0.0; n_draws * width];
            for p in 0..k {
                for b in 0..n_draws {
                    for j in 0..d {
                        out[b * width + p * d + j] = g[p * n_draws * d + b * d + j];
                    }
                }
            }
            Ok(out)
        }
        LimitMethod::Cholesky => {
            let factor = cholesky_factor(&stacked_covariance(&eval, points))?;
            let mut out = Vec::with_capacity(n_draws * width);
            for b in 0..n_draws {
                let mut r = rng::stream(seed, Domain::LimitDraw, &[b as u64]);
                let mut z = vec![0.0; width];
                rng::fill_normal(&mut r, &mut z);
                out.extend_from_slice((&factor * DVector::from_vec(z)).as_slice());
            }
            Ok(out)
        }
    }
}

/// Nearest-rank `(1 - alpha)` quantile: the `ceil((1 - alpha) N)`-th smallest draw.
pub fn quantile_nearest_rank(draws: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MpdError::Parameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let n = draws.len();
    let product = alpha * n as f64;
    if product < 1.0 {
        return Err(MpdError::InsufficientDraws { product });
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub fn critical_value(ld: &LimitDistribution, alpha: f64) -> Result<f64> {
    if ld.draws.len() < 100 {
        return Err(MpdError::Parameter(format!(
            "critical values need at least 100 draws, got {}",
            ld.draws.len()
        )));
    }
    quantile_nearest_rank(&ld.draws, alpha)
}

pub fn limit_mean(ld: &LimitDistribution) -> f64 {
    if ld.draws.is_empty() {
        return 0.0;
    }
    ld.draws.iter().sum::<f64>() / ld.draws.len() as f64
}

/// Shape of the finite-sample bound on the expected smoothed distance
/// (gamma = 1) with the universal constant set to 1. Moments are sample moments.
pub fn finite_sample_bound(sample: &PairedSample, kernel: &KernelSpec, p: f64) -> Result<f64> {
    if kernel.family != KernelFamily::PolyTail {
        return Err(MpdError::Unsupported("the finite-sample bound is stated for the poly_tail family".into()));
    }
    kernel.validate()?;
    if sample.dim() != kernel.dim {
        return Err(MpdError::Shape("sample and kernel dimensions differ".into()));
    }
    let d = kernel.dim as f64;
    if !(p > d + 1.0) {
        return Err(MpdError::Parameter(format!("moment order p = {p} must exceed dim + 1 = {}", d + 1.0)));
    }
    let n = sample.len() as f64;
    let q = p / (p - 1.0);
    let rho = kernel.rho;
    let sigma = kernel.sigma;
    let c_rho = crate::kernel::normalization_constant(rho, kernel.dim)?;

    let diffs = sample.differences();
    let dim = sample.dim();
    let gap_norms: f64 = (0..dim)
        .map(|j| {
            let m: f64 = diffs.iter().skip(j).step_by(dim).map(|v| v.abs().powf(2.0 * p)).sum::<f64>() / n;
            m.powf(1.0 / (2.0 * p))
        })
        .sum();
    if gap_norms == 0.0 {
        return Ok(0.0);
    }
    let x_moment: f64 = sample
        .xs()
        .chunks_exact(dim)
        .map(|row| crate::kernel::norm(row).powf(2.0 * p))
        .sum::<f64>()
        / n;
    let mq = x_moment.powf(1.0 / (2.0 * q));
    let two_p = 2f64.powf(p - 1.0);

    let gradient_part = d.powf(1.5)
        * rho
        * (mq * two_p * sigma.powf(-p) / (p - 1.0 - d) + 2f64.powf(rho + 1.0) * sigma.powf(-1.0) / (rho + 1.0 - d));
    let level_part = d * (mq * two_p * sigma.powf(-(p - 1.0)) / (p - 1.0 - d) + 2f64.powf(rho) / (rho - d));
    let local_part = (d.sqrt() * rho * sigma.powf(-(d + 1.0)) + sigma.powf(-d)) * (sigma.powf(d) + 1.0);

    Ok(gap_norms * c_rho * (gradient_part + level_part + local_part) / n.sqrt())
}
