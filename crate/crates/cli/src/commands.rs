use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mpd_core::baselines::AdaptedMpdConfig;
use mpd_core::finance::{build_audit_pairs, AuditConfig, HestonParams, OptionSpec, Pricer};
use mpd_core::generators::{generate, GeneratorId, GeneratorParams, GeneratorSpec, KvMode};
use mpd_core::limit_sim::{cache_key, simulate_limit};
use mpd_core::rng::derive_seed;
use mpd_core::testkit::{
    bandwidth_scaling_probe, convergence_study, power_curve, run_test_with, select_bandwidth, AdaptedBranch,
    CriticalSource, SigmaRule, TestOptions, TestReport,
};
use mpd_core::{GridSpec, KernelSpec, LimitDistribution, LimitMethod, MpdConfig, PairedSample};

use crate::args::*;
use crate::output::{unix_now, write_csv, write_json, RunManifest};

/// Missing density mass (in absolute value) above which a warning is printed.
const TRUNCATION_WARN: f64 = 1e-2;

/// Default grid step of the finance audit.
const AUDIT_GRID_STEP: f64 = 0.1;

pub enum Status {
    Done,
    Rejected,
}

pub fn dispatch(cli: &Cli) -> Result<Status> {
    let started = unix_now();
    match &cli.command {
        Command::Gen(a) => gen(a, started),
        Command::Test(a) => test(a, started),
        Command::Critical(a) => critical(a, started),
        Command::Power(a) => power(a, started),
        Command::Converge(a) => converge(a, started),
        Command::Bandwidth(b) => match &b.action {
            BandwidthAction::Select(a) => bandwidth_select(a, started),
            BandwidthAction::Probe(a) => bandwidth_probe(a, started),
        },
        Command::FinanceAudit(a) => finance_audit(a, started),
        Command::Markov(a) => markov(a, started),
    }
}

fn read_pairs(path: Option<&Path>) -> Result<PairedSample> {
    match path {
        Some(p) if p != Path::new("-") => {
            let file = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            PairedSample::read_csv(BufReader::new(file)).with_context(|| p.display().to_string())
        }
        _ => Ok(PairedSample::read_csv(io::stdin().lock()).context("stdin")?),
    }
}

fn write_pairs(sample: &PairedSample, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    sample.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn method(m: Method) -> LimitMethod {
    match m {
        Method::Multiplier => LimitMethod::Multiplier,
        Method::Cholesky => LimitMethod::Cholesky,
    }
}

/// Grid from `--grid`, or the default grid widened for `grid_sigma`.
fn grid(est: &EstimatorArgs, dim: usize, grid_sigma: f64) -> Result<GridSpec> {
    if est.grid.is_empty() {
        Ok(GridSpec::default_for(dim).for_bandwidth(grid_sigma))
    } else {
        Ok(GridSpec::parse(&est.grid, dim)?)
    }
}

fn config(est: &EstimatorArgs, dim: usize, sigma: f64, grid_sigma: f64) -> Result<MpdConfig> {
    let kernel = match est.family {
        Family::PolyTail => KernelSpec::poly_tail(est.rho, sigma, dim),
        Family::Gaussian => KernelSpec::gaussian(sigma, dim),
    };
    let cfg = MpdConfig::new(est.gamma, kernel, grid(est, dim, grid_sigma)?);
    cfg.validate()?;
    Ok(cfg)
}

fn warn_truncation(report: &TestReport) {
    // Negative mass means quadrature error on a coarse grid rather than truncation.
    if report.truncation_mass.abs() > TRUNCATION_WARN {
        eprintln!(
            "warning: the smoothed density integrates to {:.3} on the grid; widen or refine --grid",
            1.0 - report.truncation_mass
        );
    }
}

fn generator_spec(a: &GeneratorArgs, seed: u64) -> Result<GeneratorSpec> {
    let id: GeneratorId = a.id.parse()?;
    let params = GeneratorParams {
        dims: a.dims,
        k: a.k,
        epsilon: a.epsilon,
        kappa: a.kappa,
        kernel_kappa: a.kernel_kappa,
        rate: a.rate,
        lambda: a.lambda,
        gamma_shape: a.gamma_shape,
        gamma_scale: a.gamma_scale,
        bounded: a.bounded,
        bound: a.bound,
        kv_mode: if a.inner_draws.is_some() { KvMode::MonteCarlo } else { KvMode::Exact },
        inner_draws: a.inner_draws.unwrap_or(GeneratorParams::default().inner_draws),
    };
    let spec = GeneratorSpec::with_params(id, params, seed);
    spec.validate()?;
    Ok(spec)
}

fn gen(a: &GenArgs, started: f64) -> Result<Status> {
    let spec = generator_spec(&a.generator, a.seed.seed)?;
    let sample = generate(&spec, a.n)?;
    let manifest = RunManifest::new("gen", &spec, Some(a.seed.seed), started)?;
    write_csv(a.out.out.as_deref(), &manifest, |w| sample.write_csv(w))?;
    Ok(Status::Done)
}

/// Runs the test with a simulated, referenced or fixed critical value.
fn test_with_source(
    sample: &PairedSample,
    cfg: &MpdConfig,
    sim: &SimArgs,
    limit: Option<&LimitDistribution>,
    fixed: Option<f64>,
    seed: u64,
) -> Result<TestReport> {
    let source = match (limit, fixed) {
        (Some(ld), _) => CriticalSource::Reference(ld),
        (None, Some(c)) => CriticalSource::Fixed(c),
        (None, None) => CriticalSource::PlugIn,
    };
    let opts = TestOptions::new(sim.alpha, sim.sims, seed).with_method(method(sim.method)).with_source(source);
    let report = run_test_with(sample, cfg, &opts)?;
    warn_truncation(&report);
    Ok(report)
}

fn verdict(report: &TestReport, fail_on_reject: bool) -> Status {
    if report.reject && fail_on_reject {
        Status::Rejected
    } else {
        Status::Done
    }
}

fn test(a: &TestArgs, started: f64) -> Result<Status> {
    let mut sample = read_pairs(a.pairs.as_deref())?;
    if a.rescale_unit_cube {
        sample = sample.rescaled_unit_cube()?.0;
    }
    let d = sample.dim();
    let limit = a.limit.as_deref().map(LimitDistribution::load).transpose()?;
    let (cfg, selected) = match &a.select_sigma {
        Some(cands) => {
            let widest = cands.iter().copied().fold(1.0, f64::max);
            let base = config(&a.estimator, d, a.estimator.sigma, widest)?;
            let (sigma, _) = select_bandwidth(&sample, &base, cands)?;
            (base.with_sigma(sigma), Some(sigma))
        }
        None => (config(&a.estimator, d, a.estimator.sigma, a.estimator.sigma)?, None),
    };
    let mut report = test_with_source(&sample, &cfg, &a.sim, limit.as_ref(), a.critical_value, a.seed.seed)?;
    report.sigma_selected = selected;
    let manifest = RunManifest::new("test", a, Some(a.seed.seed), started)?;
    write_json(a.out.out.as_deref(), &manifest, &report)?;
    Ok(verdict(&report, a.fail_on_reject))
}

#[derive(Serialize)]
struct CriticalResult {
    alpha: f64,
    critical_value: f64,
    limit_mean: f64,
    n_sims: usize,
    method: LimitMethod,
    simulation_seed: u64,
    source_sample_size: usize,
    source_sample_digest: String,
    cache_key: String,
    cache_hit: bool,
}

fn critical(a: &CriticalArgs, started: f64) -> Result<Status> {
    // Same stream layout as the random-walk reference in the library.
    let (sample, sim_seed) = match &a.pairs {
        Some(p) => (read_pairs(Some(p))?, a.seed.seed),
        None => {
            let params = GeneratorParams { dims: a.d, ..GeneratorParams::default() };
            let spec = GeneratorSpec::with_params(GeneratorId::RandomWalk, params, derive_seed(a.seed.seed, &[0]));
            (generate(&spec, a.cov_samples)?, derive_seed(a.seed.seed, &[1]))
        }
    };
    let cfg = config(&a.estimator, sample.dim(), a.estimator.sigma, a.estimator.sigma)?;
    let m = method(a.sim.method);
    let key = cache_key(&sample, &cfg, a.sim.sims, m, sim_seed)?;
    let cached: Option<PathBuf> = a.cache_dir.as_ref().map(|dir| dir.join(format!("{key}.json")));
    let (ld, hit) = match cached.as_deref().filter(|p| p.exists()) {
        Some(p) => (LimitDistribution::load(p)?, true),
        None => (simulate_limit(&sample, &cfg, a.sim.sims, m, sim_seed)?, false),
    };
    if let (Some(p), false) = (cached.as_deref(), hit) {
        std::fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
        ld.save(p)?;
    }
    if let Some(p) = &a.save {
        ld.save(p).with_context(|| format!("cannot save {}", p.display()))?;
    }
    let result = CriticalResult {
        alpha: a.sim.alpha,
        critical_value: ld.critical_value(a.sim.alpha)?,
        limit_mean: ld.mean(),
        n_sims: ld.n_sims,
        method: ld.method,
        simulation_seed: sim_seed,
        source_sample_size: ld.source_sample_size,
        source_sample_digest: ld.source_sample_digest.clone(),
        cache_key: key,
        cache_hit: hit,
    };
    let manifest = RunManifest::new("critical", a, Some(a.seed.seed), started)?;
    write_json(a.out.out.as_deref(), &manifest, &result)?;
    Ok(Status::Done)
}

fn power(a: &PowerArgs, started: f64) -> Result<Status> {
    let id: GeneratorId = a.id.parse()?;
    if !matches!(id, GeneratorId::Shift | GeneratorId::Hermite) {
        bail!("power curves take --id shift or --id hermite");
    }
    let spec = GeneratorSpec::with_params(id, GeneratorParams { dims: a.dims, ..GeneratorParams::default() }, 0);
    let cfg = config(&a.estimator, spec.dim(), a.estimator.sigma, a.estimator.sigma)?;
    let opts = TestOptions::new(a.sim.alpha, a.sim.sims, a.seed.seed).with_method(method(a.sim.method));
    let curve = power_curve(&spec, &a.levels, a.n, a.reps, &cfg, &opts)?;
    let manifest = RunManifest::new("power", a, Some(a.seed.seed), started)?;
    table(&a.out, &manifest, &curve, |w| curve.write_csv(w))
}

/// Writes a table as CSV, or as a JSON report with `--json`.
fn table<T, F>(out: &TableOutArgs, manifest: &RunManifest, value: &T, emit: F) -> Result<Status>
where
    T: Serialize,
    F: FnOnce(&mut dyn Write) -> mpd_core::Result<()>,
{
    if out.json {
        write_json(out.out.as_deref(), manifest, value)?;
    } else {
        write_csv(out.out.as_deref(), manifest, emit)?;
    }
    Ok(Status::Done)
}

fn parse_interval(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').with_context(|| format!("interval '{s}' is not lo:hi"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("interval '{s}'"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("interval '{s}'"))?;
    if !(hi > lo) {
        bail!("interval '{s}' is empty");
    }
    Ok((lo, hi))
}

fn converge(a: &ConvergeArgs, started: f64) -> Result<Status> {
    let id: GeneratorId = a.id.parse()?;
    let spec = GeneratorSpec::with_params(id, GeneratorParams { dims: a.dims, ..GeneratorParams::default() }, 0);
    spec.validate()?;
    let cfg = config(&a.estimator, spec.dim(), a.estimator.sigma, a.estimator.sigma)?;
    let adapted = if a.adapted {
        Some(AdaptedBranch {
            cfg: AdaptedMpdConfig { gamma: a.estimator.gamma, r_exponent: a.r_exponent },
            unit_cube_bounds: if a.rescale_unit_cube { None } else { Some(parse_interval(&a.unit_cube_bounds)?) },
        })
    } else {
        None
    };
    let t = convergence_study(&spec, &a.sizes, a.trials, &cfg, adapted.as_ref(), a.seed.seed)?;
    if t.slope_undefined {
        eprintln!("warning: a mean distance is zero, so a log-log slope is undefined");
    }
    let manifest = RunManifest::new("converge", a, Some(a.seed.seed), started)?;
    table(&a.out, &manifest, &t, |w| t.write_csv(w))
}

#[derive(Serialize)]
struct Selection {
    sigma: f64,
    statistic: f64,
    candidates: Vec<f64>,
}

fn bandwidth_select(a: &SelectArgs, started: f64) -> Result<Status> {
    let sample = read_pairs(a.pairs.as_deref())?;
    let widest = a.candidates.iter().copied().fold(1.0, f64::max);
    let base = config(&a.estimator, sample.dim(), a.estimator.sigma, widest)?;
    let (sigma, statistic) = select_bandwidth(&sample, &base, &a.candidates)?;
    let manifest = RunManifest::new("bandwidth select", a, None, started)?;
    write_json(a.out.out.as_deref(), &manifest, &Selection { sigma, statistic, candidates: a.candidates.clone() })?;
    Ok(Status::Done)
}

fn bandwidth_probe(a: &ProbeArgs, started: f64) -> Result<Status> {
    let params = GeneratorParams { k: a.k, bounded: true, ..GeneratorParams::default() };
    let id = if a.null { GeneratorId::RandomWalk } else { GeneratorId::Hermite };
    let spec = GeneratorSpec::with_params(id, params, 0);
    let cfg = config(&a.estimator, 1, a.estimator.sigma, a.estimator.sigma)?;
    let rule = match a.rule {
        Rule::Subcritical => SigmaRule::Subcritical,
        Rule::Supercritical => SigmaRule::Supercritical,
    };
    let t = bandwidth_scaling_probe(&spec, a.k, &a.ns, rule, a.trials, &cfg, a.seed.seed)?;
    let manifest = RunManifest::new("bandwidth probe", a, Some(a.seed.seed), started)?;
    table(&a.out, &manifest, &t, |w| t.write_csv(w))
}

#[derive(Serialize)]
struct AuditResult<'a> {
    audit: &'a AuditConfig,
    test: TestReport,
}

fn finance_audit(a: &FinanceArgs, started: f64) -> Result<Status> {
    let params: HestonParams = match &a.params {
        Some(p) => serde_json::from_reader(BufReader::new(
            File::open(p).with_context(|| format!("cannot open {}", p.display()))?,
        ))
        .with_context(|| p.display().to_string())?,
        None => HestonParams::default(),
    };
    let audit = AuditConfig {
        params,
        option: OptionSpec { strike: a.strike, maturity: a.maturity },
        t: a.t,
        steps_per_unit: a.steps_per_unit,
        n_paths: a.paths,
        n_inner: a.inner,
        pricer: match a.pricer {
            PricerKind::Consistent => Pricer::HestonConsistent,
            PricerKind::Bs => Pricer::MisspecifiedBs { vol: a.bs_vol },
        },
        seed: derive_seed(a.seed.seed, &[0]),
    };
    let pairs = build_audit_pairs(&audit)?;
    if let Some(p) = &a.pairs_out {
        write_pairs(&pairs, p)?;
    }
    let mut cfg = config(&a.estimator, 1, a.estimator.sigma, a.estimator.sigma)?;
    if a.estimator.grid.is_empty() {
        // Prices live in a unit-sized range, far finer than the integer default grid.
        cfg = cfg.with_grid(GridSpec::cube(1, -50.0, 50.0, AUDIT_GRID_STEP).for_bandwidth(a.estimator.sigma));
    }
    let test = test_with_source(&pairs, &cfg, &a.sim, None, a.critical_value, derive_seed(a.seed.seed, &[1]))?;
    let status = verdict(&test, a.fail_on_reject);
    let manifest = RunManifest::new("finance-audit", a, Some(a.seed.seed), started)?;
    write_json(a.out.out.as_deref(), &manifest, &AuditResult { audit: &audit, test })?;
    Ok(status)
}

#[derive(Serialize)]
struct MarkovResult<'a> {
    generator: &'a GeneratorSpec,
    test: TestReport,
}

fn markov(a: &MarkovArgs, started: f64) -> Result<Status> {
    if !matches!(a.chain.as_str(), "gauss_markov" | "cashflow") {
        bail!("--chain must be gauss_markov or cashflow, not '{}'", a.chain);
    }
    let g = GeneratorArgs {
        id: a.chain.clone(),
        dims: 2,
        k: 1,
        epsilon: 0.0,
        kappa: a.kappa,
        kernel_kappa: a.kernel_kappa,
        rate: a.rate,
        lambda: a.lambda,
        gamma_shape: a.gamma_shape,
        gamma_scale: a.gamma_scale,
        bounded: false,
        bound: mpd_core::generators::DEFAULT_BOUND,
        inner_draws: a.inner_draws,
    };
    let spec = generator_spec(&g, derive_seed(a.seed.seed, &[0]))?;
    let pairs = generate(&spec, a.n)?;
    if let Some(p) = &a.pairs_out {
        write_pairs(&pairs, p)?;
    }
    let cfg = config(&a.estimator, pairs.dim(), a.estimator.sigma, a.estimator.sigma)?;
    let test = test_with_source(&pairs, &cfg, &a.sim, None, a.critical_value, derive_seed(a.seed.seed, &[1]))?;
    let status = verdict(&test, a.fail_on_reject);
    let manifest = RunManifest::new("markov", a, Some(a.seed.seed), started)?;
    write_json(a.out.out.as_deref(), &manifest, &MarkovResult { generator: &spec, test })?;
    Ok(status)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervals() {
        assert_eq!(parse_interval("-1:1").unwrap(), (-1.0, 1.0));
        assert_eq!(parse_interval(" 0 : 2.5 ").unwrap(), (0.0, 2.5));
        assert!(parse_interval("1:1").is_err());
        assert!(parse_interval("0,1").is_err());
        assert!(parse_interval("a:1").is_err());
    }

    #[test]
    fn default_grid_follows_bandwidth() {
        let est = EstimatorArgs { family: Family::PolyTail, rho: 5.0, sigma: 8.0, gamma: 1.0, grid: vec![] };
        let cfg = config(&est, 1, 8.0, 8.0).unwrap();
        assert_eq!(cfg.grid, GridSpec::default_for(1).for_bandwidth(8.0));
        let est = EstimatorArgs { grid: vec!["-2:2:0.5".into()], ..est };
        assert_eq!(config(&est, 2, 8.0, 8.0).unwrap().grid, GridSpec::cube(2, -2.0, 2.0, 0.5));
    }

    #[test]
    fn invalid_kernel_is_rejected() {
        let est = EstimatorArgs { family: Family::PolyTail, rho: 1.5, sigma: 1.0, gamma: 1.0, grid: vec![] };
        assert!(config(&est, 1, 1.0, 1.0).is_err());
    }
}
