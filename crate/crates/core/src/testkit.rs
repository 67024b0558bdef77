//! The martingale-pair test and the studies built on it: bandwidth selection,
//! power curves, convergence rates and bandwidth-scaling probes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{adapted_empirical_mpd, AdaptedMpdConfig};
use crate::error::{MpdError, Result};
use crate::estimator::{smoothed_mpd, test_statistic, truncation_mass, MpdConfig};
use crate::generators::{generate, GeneratorId, GeneratorParams, GeneratorSpec};
use crate::limit_sim::{critical_value, simulate_limit, LimitDistribution, LimitMethod};
use crate::rng::derive_seed;
use crate::sample::PairedSample;

/// Bandwidths searched by [`select_bandwidth`] when none are given.
pub const DEFAULT_SIGMA_CANDIDATES: [f64; 8] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 80.0, 100.0];

/// Where the critical value comes from.
#[derive(Debug, Clone, Copy)]
pub enum CriticalSource<'a> {
    /// Simulate the limit from the sample under test.
    PlugIn,
    /// Use a precomputed limit distribution with the same gamma, kernel and grid.
    Reference(&'a LimitDistribution),
    /// Use a fixed number.
    Fixed(f64),
}

impl CriticalSource<'_> {
    fn label(&self) -> &'static str {
        match self {
            Self::PlugIn => "plug_in",
            Self::Reference(_) => "reference",
            Self::Fixed(_) => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TestOptions<'a> {
    pub alpha: f64,
    pub n_sims: usize,
    pub seed: u64,
    pub method: LimitMethod,
    pub source: CriticalSource<'a>,
}

impl<'a> TestOptions<'a> {
    pub fn new(alpha: f64, n_sims: usize, seed: u64) -> Self {
        Self { alpha, n_sims, seed, method: LimitMethod::Multiplier, source: CriticalSource::PlugIn }
    }

    pub fn with_source(self, source: CriticalSource<'a>) -> Self {
        Self { source, ..self }
    }

    pub fn with_method(self, method: LimitMethod) -> Self {
        Self { method, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub alpha: f64,
    /// `statistic > critical_value`.
    pub reject: bool,
    pub n: usize,
    pub cfg: MpdConfig,
    pub n_sims: usize,
    pub seed: u64,
    pub method: LimitMethod,
    pub critical_source: String,
    pub sigma_selected: Option<f64>,
    /// Smoothed-density mass falling outside the grid.
    pub truncation_mass: f64,
}

/// Tests the martingale-pair hypothesis with a plug-in critical value from the multiplier method.
pub fn run_test(sample: &PairedSample, cfg: &MpdConfig, alpha: f64, n_sims: usize, seed: u64) -> Result<TestReport> {
    run_test_with(sample, cfg, &TestOptions::new(alpha, n_sims, seed))
}

pub fn run_test_with(sample: &PairedSample, cfg: &MpdConfig, opts: &TestOptions) -> Result<TestReport> {
    cfg.check_sample(sample)?;
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(MpdError::Parameter(format!("alpha = {} must lie in (0, 1)", opts.alpha)));
    }
    let statistic = test_statistic(sample, cfg)?;
    let (critical, n_sims) = match opts.source {
        CriticalSource::PlugIn => {
            let ld = simulate_limit(sample, cfg, opts.n_sims, opts.method, opts.seed)?;
            (critical_value(&ld, opts.alpha)?, opts.n_sims)
        }
        CriticalSource::Reference(ld) => {
            if ld.gamma != cfg.gamma || ld.kernel != cfg.kernel || ld.grid != cfg.grid {
                return Err(MpdError::Parameter(
                    "the reference distribution was simulated with a different gamma, kernel or grid".into(),
                ));
            }
            (critical_value(ld, opts.alpha)?, ld.n_sims)
        }
        CriticalSource::Fixed(c) => {
            if !c.is_finite() {
                return Err(MpdError::Parameter(format!("critical value {c} is not finite")));
            }
            (c, 0)
        }
    };
    Ok(TestReport {
        statistic,
        critical_value: critical,
        alpha: opts.alpha,
        reject: statistic > critical,
        n: sample.len(),
        cfg: cfg.clone(),
        n_sims,
        seed: opts.seed,
        method: opts.method,
        critical_source: opts.source.label().into(),
        sigma_selected: None,
        truncation_mass: truncation_mass(sample, &cfg.kernel, &cfg.grid)?,
    })
}

/// Limit distribution from a random-walk coupling (`Y = X + Z`, standard
/// normal coordinates) of `n_cov` pairs, the usual fixed reference null.
pub fn random_walk_reference(cfg: &MpdConfig, n_cov: usize, n_sims: usize, method: LimitMethod, seed: u64) -> Result<LimitDistribution> {
    let params = GeneratorParams { dims: cfg.kernel.dim, ..GeneratorParams::default() };
    let spec = GeneratorSpec::with_params(GeneratorId::RandomWalk, params, derive_seed(seed, &[0]));
    let sample = generate(&spec, n_cov)?;
    simulate_limit(&sample, cfg, n_sims, method, derive_seed(seed, &[1]))
}

/// Picks the bandwidth maximizing the gamma = 1 statistic; ties go to the smallest.
pub fn select_bandwidth(sample: &PairedSample, cfg_base: &MpdConfig, candidates: &[f64]) -> Result<(f64, f64)> {
    if candidates.is_empty() {
        return Err(MpdError::Parameter("no bandwidth candidates".into()));
    }
    if let Some(bad) = candidates.iter().find(|s| !(**s >= 1.0) || !s.is_finite()) {
        return Err(MpdError::Parameter(format!("bandwidth candidate {bad} is below 1")));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let base = cfg_base.with_gamma(1.0);
    let mut best: Option<(f64, f64)> = None;
    for sigma in sorted {
        let stat = test_statistic(sample, &base.with_sigma(sigma))?;
        if best.is_none_or(|(_, b)| stat > b) {
            best = Some((sigma, stat));
        }
    }
    Ok(best.expect("non-empty candidates"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub perturbation_levels: Vec<f64>,
    pub rejection_rates: Vec<f64>,
    pub mean_statistics: Vec<f64>,
    pub replications: usize,
}

impl PowerCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        csv_io(w.write_record(["level", "rejection_rate", "mean_statistic", "replications"]))?;
        for i in 0..self.perturbation_levels.len() {
            csv_io(w.write_record([
                format!("{:?}", self.perturbation_levels[i]),
                format!("{:?}", self.rejection_rates[i]),
                format!("{:?}", self.mean_statistics[i]),
                self.replications.to_string(),
            ]))?;
        }
        csv_io(w.flush().map_err(csv::Error::from))
    }
}

fn csv_io<T>(r: std::result::Result<T, csv::Error>) -> Result<T> {
    r.map_err(|e| MpdError::Io(std::io::Error::other(e)))
}

/// Applies a perturbation level to a generator: the shift size for `shift`,
/// the order for `hermite`.
fn at_level(base: &GeneratorSpec, level: f64) -> Result<GeneratorSpec> {
    let mut spec = base.clone();
    match base.id {
        GeneratorId::Shift => spec.params.epsilon = level,
        GeneratorId::Hermite => {
            if !(level >= 0.0 && level.fract() == 0.0) {
                return Err(MpdError::Parameter(format!("Hermite order {level} must be a non-negative integer")));
            }
            spec.params.k = level as u32;
        }
        other => {
            return Err(MpdError::Parameter(format!(
                "{} has no perturbation level; use shift or hermite",
                other.name()
            )))
        }
    }
    Ok(spec)
}

/// Rejection rate and mean statistic of [`run_test`] per perturbation level.
/// Replication `r` at level `l` draws its data and critical value from seeds
/// derived from `(seed, l, r)`.
pub fn power_curve(
    base: &GeneratorSpec,
    levels: &[f64],
    n: usize,
    replications: usize,
    cfg: &MpdConfig,
    opts: &TestOptions,
) -> Result<PowerCurve> {
    if replications == 0 {
        return Err(MpdError::Parameter("replications must be at least 1".into()));
    }
    let mut rates = Vec::with_capacity(levels.len());
    let mut means = Vec::with_capacity(levels.len());
    for (li, &level) in levels.iter().enumerate() {
        let spec = at_level(base, level)?;
        let reports = (0..replications)
            .into_par_iter()
            .map(|r| {
                let data_seed = derive_seed(opts.seed, &[li as u64, r as u64, 0]);
                let sample = generate(&spec.with_seed(data_seed), n)?;
                let sim_seed = derive_seed(opts.seed, &[li as u64, r as u64, 1]);
                run_test_with(&sample, cfg, &TestOptions { seed: sim_seed, ..*opts })
            })
            .collect::<Result<Vec<_>>>()?;
        rates.push(reports.iter().filter(|r| r.reject).count() as f64 / replications as f64);
        means.push(reports.iter().map(|r| r.statistic).sum::<f64>() / replications as f64);
    }
    Ok(PowerCurve {
        perturbation_levels: levels.to_vec(),
        rejection_rates: rates,
        mean_statistics: means,
        replications,
    })
}

/// Least-squares slope of `ln y` against `ln x`; NaN when any `y` is not positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedBranch {
    pub cfg: AdaptedMpdConfig,
    /// Fixed interval mapped affinely onto `[0, 1]` on every axis; `None`
    /// rescales each sample by its own range.
    pub unit_cube_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub mean_smoothed_mpd: f64,
    pub mean_adapted_mpd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub smoothed_slope: f64,
    pub adapted_slope: Option<f64>,
    /// Set when a slope could not be fitted because some mean was zero.
    pub slope_undefined: bool,
}

impl ConvergenceTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        csv_io(w.write_record(["n", "mean_smoothed_mpd", "mean_adapted_mpd"]))?;
        for r in &self.rows {
            csv_io(w.write_record([
                r.n.to_string(),
                format!("{:?}", r.mean_smoothed_mpd),
                r.mean_adapted_mpd.map(|v| format!("{v:?}")).unwrap_or_default(),
            ]))?;
        }
        csv_io(w.flush().map_err(csv::Error::from))
    }
}

fn map_to_unit_cube(sample: &PairedSample, lo: f64, hi: f64) -> Result<PairedSample> {
    let f = |v: &f64| (v - lo) / (hi - lo);
    PairedSample::new(sample.xs().iter().map(f).collect(), sample.ys().iter().map(f).collect(), sample.dim())
}

/// Mean smoothed (and optionally adapted) distance over `trials` samples at each size.
pub fn convergence_study(
    spec: &GeneratorSpec,
    sizes: &[usize],
    trials: usize,
    cfg: &MpdConfig,
    adapted: Option<&AdaptedBranch>,
    seed: u64,
) -> Result<ConvergenceTable> {
    convergence_study_with(|n, s| generate(&spec.with_seed(s), n), sizes, trials, cfg, adapted, seed)
}

/// [`convergence_study`] over an arbitrary sampler `(n, seed) -> sample`.
pub fn convergence_study_with<F>(
    sampler: F,
    sizes: &[usize],
    trials: usize,
    cfg: &MpdConfig,
    adapted: Option<&AdaptedBranch>,
    seed: u64,
) -> Result<ConvergenceTable>
where
    F: Fn(usize, u64) -> Result<PairedSample> + Sync,
{
    if sizes.len() < 2 {
        return Err(MpdError::Parameter("a convergence study needs at least two sizes".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(MpdError::Parameter("sizes must be positive and strictly ascending".into()));
    }
    if trials == 0 {
        return Err(MpdError::Parameter("trials must be at least 1".into()));
    }
    if let Some((lo, hi)) = adapted.and_then(|a| a.unit_cube_bounds) {
        if !(lo < hi) {
            return Err(MpdError::Parameter(format!("unit-cube bounds ({lo}, {hi}) are empty")));
        }
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &n) in sizes.iter().enumerate() {
        let per_trial = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<(f64, Option<f64>)> {
                let sample = sampler(n, derive_seed(seed, &[si as u64, t as u64]))?;
                let smoothed = smoothed_mpd(&sample, cfg)?;
                let adapted_value = match adapted {
                    None => None,
                    Some(branch) => {
                        let unit = match branch.unit_cube_bounds {
                            Some((lo, hi)) => map_to_unit_cube(&sample, lo, hi)?,
                            None => sample.rescaled_unit_cube()?.0,
                        };
                        Some(adapted_empirical_mpd(&unit, &branch.cfg)?)
                    }
                };
                Ok((smoothed, adapted_value))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_smoothed = per_trial.iter().map(|v| v.0).sum::<f64>() / trials as f64;
        let mean_adapted = adapted.map(|_| per_trial.iter().map(|v| v.1.unwrap_or(0.0)).sum::<f64>() / trials as f64);
        rows.push(ConvergenceRow { n, mean_smoothed_mpd: mean_smoothed, mean_adapted_mpd: mean_adapted });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let smoothed: Vec<f64> = rows.iter().map(|r| r.mean_smoothed_mpd).collect();
    let smoothed_slope = log_log_slope(&ns, &smoothed);
    let adapted_slope = adapted.map(|_| {
        let a: Vec<f64> = rows.iter().map(|r| r.mean_adapted_mpd.unwrap_or(0.0)).collect();
        log_log_slope(&ns, &a)
    });
    let slope_undefined = smoothed_slope.is_nan() || adapted_slope.is_some_and(f64::is_nan);
    Ok(ConvergenceTable { rows, smoothed_slope, adapted_slope, slope_undefined })
}

/// Bandwidth growth rule for [`bandwidth_scaling_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// `sigma_n = n^(1/(4k))`.
    Subcritical,
    /// `sigma_n = n^(1/k)`.
    Supercritical,
}

impl SigmaRule {
    pub fn sigma(self, n: usize, k: u32) -> f64 {
        let k = k as f64;
        match self {
            Self::Subcritical => (n as f64).powf(1.0 / (4.0 * k)),
            Self::Supercritical => (n as f64).powf(1.0 / k),
        }
    }
}

impl std::str::FromStr for SigmaRule {
    type Err = MpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subcritical" => Ok(Self::Subcritical),
            "supercritical" => Ok(Self::Supercritical),
            other => Err(MpdError::Parameter(format!("unknown sigma rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub sigma: f64,
    pub mean_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub k: u32,
    pub rule: SigmaRule,
    pub rows: Vec<ScalingRow>,
    /// Log-log slope of the mean statistic against `n`.
    pub slope: f64,
    /// Growth exponent `1/2 - k * (sigma exponent)` expected under the alternative.
    pub predicted_slope: f64,
    /// Largest mean statistic over the median one.
    pub max_over_median: f64,
}

impl ScalingTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        csv_io(w.write_record(["n", "sigma", "mean_statistic"]))?;
        for r in &self.rows {
            csv_io(w.write_record([r.n.to_string(), format!("{:?}", r.sigma), format!("{:?}", r.mean_statistic)]))?;
        }
        csv_io(w.flush().map_err(csv::Error::from))
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Mean statistic over `trials` samples from `spec` at each `n`, with
/// `sigma_n` from `rule` and the grid of `cfg` widened by [`GridSpec::for_bandwidth`].
pub fn bandwidth_scaling_probe(
    spec: &GeneratorSpec,
    k: u32,
    n_values: &[usize],
    rule: SigmaRule,
    trials: usize,
    cfg: &MpdConfig,
    seed: u64,
) -> Result<ScalingTable> {
    if k == 0 {
        return Err(MpdError::Parameter("k must be at least 1".into()));
    }
    if n_values.is_empty() || trials == 0 {
        return Err(MpdError::Parameter("need at least one n and one trial".into()));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for (ni, &n) in n_values.iter().enumerate() {
        let sigma = rule.sigma(n, k);
        let local = cfg.with_sigma(sigma).with_grid(cfg.grid.for_bandwidth(sigma));
        let stats = (0..trials)
            .into_par_iter()
            .map(|t| {
                let sample = generate(&spec.with_seed(derive_seed(seed, &[ni as u64, t as u64])), n)?;
                test_statistic(&sample, &local)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ScalingRow { n, sigma, mean_statistic: stats.iter().sum::<f64>() / trials as f64 });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_statistic).collect();
    let sigma_exponent = match rule {
        SigmaRule::Subcritical => 1.0 / (4.0 * k as f64),
        SigmaRule::Supercritical => 1.0 / k as f64,
    };
    let med = median(&means);
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingTable {
        k,
        rule,
        slope: if rows.len() >= 2 { log_log_slope(&ns, &means) } else { f64::NAN },
        predicted_slope: 0.5 - k as f64 * sigma_exponent,
        max_over_median: if med > 0.0 { max / med } else { f64::NAN },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: GeneratorId, seed: u64) -> GeneratorSpec {
        GeneratorSpec::new(id, seed)
    }

    #[test]
    fn report_echoes_and_rejects_strictly() {
        let s = generate(&spec(GeneratorId::Hermite, 1), 100).unwrap();
        let cfg = MpdConfig::default_for(1);
        let r = run_test(&s, &cfg, 0.05, 200, 3).unwrap();
        assert_eq!(r.reject, r.statistic > r.critical_value);
        assert_eq!((r.n, r.n_sims, r.seed, r.alpha), (100, 200, 3, 0.05));
        assert_eq!(r.cfg, cfg);
        assert_eq!(r, run_test(&s, &cfg, 0.05, 200, 3).unwrap());
        let at = run_test_with(&s, &cfg, &TestOptions::new(0.05, 0, 0).with_source(CriticalSource::Fixed(r.statistic)))
            .unwrap();
        assert!(!at.reject, "equality accepts");
        assert!(run_test(&s, &cfg, 1.0, 200, 3).is_err());
    }

    #[test]
    fn reference_must_match_config() {
        let cfg = MpdConfig::default_for(1);
        let ld = random_walk_reference(&cfg, 50, 100, LimitMethod::Multiplier, 1).unwrap();
        let s = generate(&spec(GeneratorId::RandomWalk, 2), 60).unwrap();
        let opts = TestOptions::new(0.05, 100, 0).with_source(CriticalSource::Reference(&ld));
        let r = run_test_with(&s, &cfg, &opts).unwrap();
        assert_eq!(r.critical_value, ld.critical_value(0.05).unwrap());
        assert_eq!(r.critical_source, "reference");
        assert!(run_test_with(&s, &cfg.with_sigma(2.0), &opts).is_err());
    }

    #[test]
    fn bandwidth_selection_ties_and_argmax() {
        let xs = vec![0.1, -0.4, 1.3];
        let same = PairedSample::from_1d(xs.clone(), xs).unwrap();
        let cfg = MpdConfig::default_for(1);
        assert_eq!(select_bandwidth(&same, &cfg, &[5.0, 2.0, 1.0]).unwrap(), (1.0, 0.0));
        let alt = generate(&spec(GeneratorId::Hermite, 4), 100).unwrap();
        let cands = [1.0, 5.0, 20.0, 80.0];
        let (sigma, best) = select_bandwidth(&alt, &cfg, &cands).unwrap();
        assert!(cands.contains(&sigma));
        for c in cands {
            assert!(best >= test_statistic(&alt, &cfg.with_sigma(c)).unwrap());
        }
        assert!(select_bandwidth(&alt, &cfg, &[]).is_err());
        assert!(select_bandwidth(&alt, &cfg, &[0.5]).is_err());
    }

    #[test]
    fn power_curve_is_deterministic_and_bounded() {
        let cfg = MpdConfig::default_for(1);
        let base = spec(GeneratorId::Shift, 0);
        let opts = TestOptions::new(0.05, 200, 8);
        let a = power_curve(&base, &[0.0, 1.0], 50, 6, &cfg, &opts).unwrap();
        assert_eq!(a, power_curve(&base, &[0.0, 1.0], 50, 6, &cfg, &opts).unwrap());
        assert!(a.rejection_rates.iter().all(|r| (0.0..=1.0).contains(r)));
        assert_eq!(a.rejection_rates[1], 1.0);
        assert!(power_curve(&spec(GeneratorId::RandomWalk, 0), &[0.0], 50, 2, &cfg, &opts).is_err());
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }

    #[test]
    fn slope_fit() {
        let x = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&x, &[1.0, 0.0, 1.0]).is_nan());
    }

    #[test]
    fn degenerate_convergence_is_flagged() {
        let cfg = MpdConfig::default_for(1);
        let still = |n: usize, s: u64| {
            let xs: Vec<f64> = (0..n).map(|i| ((i as u64 ^ s) % 7) as f64).collect();
            PairedSample::from_1d(xs.clone(), xs)
        };
        let t = convergence_study_with(still, &[10, 20], 2, &cfg, None, 1).unwrap();
        assert!(t.rows.iter().all(|r| r.mean_smoothed_mpd == 0.0));
        assert!(t.slope_undefined && t.smoothed_slope.is_nan());
        let live = convergence_study(&spec(GeneratorId::Uniform, 0), &[50, 200], 2, &cfg, None, 1).unwrap();
        assert!(!live.slope_undefined && live.smoothed_slope.is_finite());
        assert!(convergence_study(&spec(GeneratorId::Uniform, 0), &[200, 50], 2, &cfg, None, 1).is_err());
    }

    #[test]
    fn sigma_rules() {
        assert!((SigmaRule::Subcritical.sigma(10_000, 1) - 10.0).abs() < 1e-12);
        assert_eq!(SigmaRule::Supercritical.sigma(400, 2), 20.0);
        assert_eq!("subcritical".parse::<SigmaRule>().unwrap(), SigmaRule::Subcritical);
    }
}
