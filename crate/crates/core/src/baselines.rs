//! Competing estimators: the adapted empirical distance on a uniform cube
//! partition, and the one-dimensional indicator-sum (GKS-type) statistic with
//! critical values from its Brownian-functional limit.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MpdError, Result};
use crate::limit_sim::quantile_nearest_rank;
use crate::rng::{self, Domain};
use crate::sample::PairedSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedMpdConfig {
    pub gamma: f64,
    /// Cells per axis are `ceil(N^r)`; `None` means `r = 1 / (d + 2)`.
    pub r_exponent: Option<f64>,
}

impl Default for AdaptedMpdConfig {
    fn default() -> Self {
        Self { gamma: 1.0, r_exponent: None }
    }
}

impl AdaptedMpdConfig {
    pub fn exponent(&self, dim: usize) -> f64 {
        self.r_exponent.unwrap_or(1.0 / (dim as f64 + 2.0))
    }

    /// Number of cells per axis for `n` samples.
    pub fn cells_per_axis(&self, n: usize, dim: usize) -> usize {
        ((n as f64).powf(self.exponent(dim)) - 1e-9).ceil().max(1.0) as usize
    }
}

fn cell_index(v: f64, cells: usize) -> usize {
    ((v * cells as f64).floor() as usize).min(cells - 1)
}

/// Adapted empirical distance: X and Y are snapped to the centres of a uniform
/// partition of `[0,1]^d`, and the distance of the snapped empirical law is
/// `2^(1-gamma) sum_g (count_g / N) |g - mean of snapped Y over g|^gamma`.
pub fn adapted_empirical_mpd(sample: &PairedSample, cfg: &AdaptedMpdConfig) -> Result<f64> {
    if !(cfg.gamma >= 1.0) {
        return Err(MpdError::Parameter(format!("gamma = {} must be at least 1", cfg.gamma)));
    }
    let d = sample.dim();
    let r = cfg.exponent(d);
    if !(r > 0.0 && r <= 1.0) {
        return Err(MpdError::Parameter(format!("r exponent {r} must lie in (0, 1]")));
    }
    for i in 0..sample.len() {
        for (j, v) in sample.x(i).iter().chain(sample.y(i)).enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(MpdError::OutsideUnitCube { row: i, column: j, value: *v });
            }
        }
    }
    let n = sample.len();
    let cells = cfg.cells_per_axis(n, d);
    let width = 1.0 / cells as f64;
    let center = |idx: usize| (idx as f64 + 0.5) * width;

    // Snapped Y are summed as integer cell indices, which keeps the result
    // exact under any reordering of the sample.
    let mut groups: BTreeMap<Vec<usize>, (usize, Vec<u64>)> = BTreeMap::new();
    for i in 0..n {
        let key: Vec<usize> = sample.x(i).iter().map(|v| cell_index(*v, cells)).collect();
        let entry = groups.entry(key).or_insert_with(|| (0, vec![0; d]));
        entry.0 += 1;
        for (acc, v) in entry.1.iter_mut().zip(sample.y(i)) {
            *acc += cell_index(*v, cells) as u64;
        }
    }
    let mut total = 0.0;
    for (key, (count, sum)) in &groups {
        let dist2: f64 = key
            .iter()
            .zip(sum)
            .map(|(k, s)| {
                let mean_center = (*s as f64 / *count as f64 + 0.5) * width;
                (center(*k) - mean_center).powi(2)
            })
            .sum();
        total += (*count as f64 / n as f64) * dist2.sqrt().powf(cfg.gamma);
    }
    Ok(2f64.powf(1.0 - cfg.gamma) * total)
}

/// `sup_a |sum (Y_t - X_t) 1{X_t <= a}| / sqrt(sum (Y_t - X_t)^2)` for one-dimensional pairs.
pub fn gks_statistic(sample: &PairedSample) -> Result<f64> {
    if sample.dim() != 1 {
        return Err(MpdError::Shape(format!(
            "the indicator-sum statistic needs one-dimensional pairs, got dimension {}",
            sample.dim()
        )));
    }
    let diffs = sample.differences();
    let denom = diffs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(MpdError::DegenerateDenominator);
    }
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&a, &b| sample.xs()[a].total_cmp(&sample.xs()[b]));
    Ok(sup_abs_grouped_cumsum(&order, sample.xs(), &diffs) / denom)
}

/// Largest `|partial sum|` of `values` taken in `order`, evaluated only where the
/// level `levels[order[k]]` changes (ties enter together).
fn sup_abs_grouped_cumsum(order: &[usize], levels: &[f64], values: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    let mut cum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        cum += values[i];
        let last_of_level = k + 1 == order.len() || levels[order[k + 1]] != levels[i];
        if last_of_level {
            best = best.max(cum.abs());
        }
    }
    best
}

/// Draws of `sup_a |J(a)|`, `J(a) = integral_0^1 1{W(s) <= a} dW(s)`, by an
/// Euler discretization of Brownian motion with the supremum taken over the
/// visited levels.
pub fn gks_null_draws(n_paths: usize, n_steps: usize, seed: u64) -> Result<Vec<f64>> {
    if n_paths < 1000 || n_steps < 1000 {
        return Err(MpdError::Parameter(format!(
            "need at least 1000 paths and 1000 steps, got {n_paths} and {n_steps}"
        )));
    }
    let sd = 1.0 / (n_steps as f64).sqrt();
    Ok((0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(seed, Domain::Gks, &[p as u64]);
            let mut levels = Vec::with_capacity(n_steps);
            let mut increments = Vec::with_capacity(n_steps);
            let mut w = 0.0;
            for _ in 0..n_steps {
                let dw = sd * rng::standard_normal(&mut r);
                levels.push(w);
                increments.push(dw);
                w += dw;
            }
            let mut order: Vec<usize> = (0..n_steps).collect();
            order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
            sup_abs_grouped_cumsum(&order, &levels, &increments)
        })
        .collect())
}

/// `(1 - alpha)` nearest-rank quantile of [`gks_null_draws`].
pub fn gks_null_critical(alpha: f64, n_paths: usize, n_steps: usize, seed: u64) -> Result<f64> {
    quantile_nearest_rank(&gks_null_draws(n_paths, n_steps, seed)?, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: enumerate every cube of the partition and scan all samples for each.
    fn naive_adapted(s: &PairedSample, gamma: f64, cells: usize) -> f64 {
        let d = s.dim();
        let snap = |v: f64| {
            let mut k = 0;
            while k + 1 < cells && v >= (k + 1) as f64 / cells as f64 {
                k += 1;
            }
            (k as f64 + 0.5) / cells as f64
        };
        let mut total = 0.0;
        for flat in 0..cells.pow(d as u32) {
            let mut g = vec![0.0; d];
            let mut rest = flat;
            for gj in g.iter_mut() {
                *gj = ((rest % cells) as f64 + 0.5) / cells as f64;
                rest /= cells;
            }
            let members: Vec<usize> = (0..s.len())
                .filter(|&i| s.x(i).iter().zip(&g).all(|(v, c)| snap(*v) == *c))
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut dist2 = 0.0;
            for j in 0..d {
                let mean = members.iter().map(|&i| snap(s.y(i)[j])).sum::<f64>() / members.len() as f64;
                dist2 += (g[j] - mean).powi(2);
            }
            total += members.len() as f64 / s.len() as f64 * dist2.sqrt().powf(gamma);
        }
        2f64.powf(1.0 - gamma) * total
    }

    fn unit_sample(seed: u64, n: usize, d: usize) -> PairedSample {
        let mut r = rng::stream(seed, Domain::Generator, &[]);
        let xs: Vec<f64> = (0..n * d).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
        let ys: Vec<f64> = (0..n * d).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
        PairedSample::new(xs, ys, d).unwrap()
    }

    #[test]
    fn adapted_hand_example() {
        let s = PairedSample::from_1d(vec![0.1, 0.2, 0.6, 0.7], vec![0.9, 0.1, 0.6, 0.7]).unwrap();
        let cfg = AdaptedMpdConfig { gamma: 1.0, r_exponent: Some(0.5) };
        assert!((adapted_empirical_mpd(&s, &cfg).unwrap() - 0.125).abs() < 1e-15);
        assert!((naive_adapted(&s, 1.0, 2) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn adapted_zero_and_domain() {
        let s = unit_sample(1, 50, 2);
        let same = PairedSample::new(s.xs().to_vec(), s.xs().to_vec(), 2).unwrap();
        assert_eq!(adapted_empirical_mpd(&same, &AdaptedMpdConfig::default()).unwrap(), 0.0);
        let bad = PairedSample::from_1d(vec![0.5, 1.2], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            adapted_empirical_mpd(&bad, &AdaptedMpdConfig::default()),
            Err(MpdError::OutsideUnitCube { row: 1, column: 0, .. })
        ));
        let edge = PairedSample::from_1d(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(adapted_empirical_mpd(&edge, &AdaptedMpdConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn gks_examples() {
        let one = PairedSample::from_1d(vec![0.3], vec![1.3]).unwrap();
        assert!((gks_statistic(&one).unwrap() - 1.0).abs() < 1e-15);
        let delta = 0.37;
        let toy = PairedSample::from_1d(vec![1.0, 2.0], vec![1.0 + delta, 2.0 - delta]).unwrap();
        assert!((gks_statistic(&toy).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let flat = PairedSample::from_1d(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        assert!(matches!(gks_statistic(&flat), Err(MpdError::DegenerateDenominator)));
        // Tied X enter the indicator together.
        let tied = PairedSample::from_1d(vec![0.0, 0.0, 1.0], vec![1.0, -1.0, 0.5]).unwrap();
        assert!((gks_statistic(&tied).unwrap() - 0.5 / 2.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gks_null_quantiles() {
        let draws = gks_null_draws(2000, 1000, 3).unwrap();
        assert!(draws.iter().all(|v| *v >= 0.0));
        let q = |a| quantile_nearest_rank(&draws, a).unwrap();
        assert!(q(0.01) >= q(0.05) && q(0.05) >= q(0.10) && q(0.10) >= q(0.5));
        // The statistic is bounded below by |W(1)|, so its lower tail is small but not zero.
        assert!(q(0.999) < 0.25 * q(0.05));
        assert!(gks_null_draws(10, 1000, 1).is_err());
        assert_eq!(gks_null_draws(1000, 1000, 4).unwrap(), gks_null_draws(1000, 1000, 4).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn adapted_matches_brute_force(seed in 0u64..10_000, n in 1usize..=20, d in 1usize..=2, r in 0.2f64..1.0, gamma in 1.0f64..3.0) {
            let s = unit_sample(seed, n, d);
            let cfg = AdaptedMpdConfig { gamma, r_exponent: Some(r) };
            let got = adapted_empirical_mpd(&s, &cfg).unwrap();
            let want = naive_adapted(&s, gamma, cfg.cells_per_axis(n, d));
            prop_assert!((got - want).abs() < 1e-12);
            let rev: Vec<usize> = (0..n).rev().collect();
            prop_assert_eq!(adapted_empirical_mpd(&s.permuted(&rev).unwrap(), &cfg).unwrap(), got);
        }

        #[test]
        fn gks_bounded_and_scale_invariant(seed in 0u64..10_000, n in 1usize..50, c in 0.01f64..100.0) {
            let s = unit_sample(seed, n, 1);
            let g = gks_statistic(&s).unwrap();
            prop_assert!(g >= 0.0 && g <= (n as f64).sqrt() + 1e-12);
            let scaled = PairedSample::from_1d(
                s.xs().iter().map(|v| v * c).collect(),
                s.ys().iter().map(|v| v * c).collect(),
            ).unwrap();
            let gs = gks_statistic(&scaled).unwrap();
            prop_assert!((gs - g).abs() <= 1e-12 * g.max(1.0));
        }
    }
}
