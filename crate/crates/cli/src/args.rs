use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "mpd", version, about = "Martingale-pair tests from the smoothed projection distance")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate synthetic pairs as CSV.
    Gen(GenArgs),
    /// Test a sample of pairs for the martingale property.
    Test(TestArgs),
    /// Simulate the limit law and report critical values.
    Critical(CriticalArgs),
    /// Rejection rate against a perturbation level.
    Power(PowerArgs),
    /// Mean distance against sample size, with log-log slopes.
    Converge(ConvergeArgs),
    /// Bandwidth selection and bandwidth-scaling probes.
    Bandwidth(BandwidthArgs),
    /// Test (price, discounted payoff) pairs from a Heston model.
    FinanceAudit(FinanceArgs),
    /// Lift a Markov chain to pairs and test them.
    Markov(MarkovArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PolyTail,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Multiplier,
    Cholesky,
}

/// Seed with an environment fallback.
#[derive(Debug, Args, Serialize)]
pub struct SeedArgs {
    /// Seed for every random stream (falls back to MPD_SEED, then 0).
    #[arg(long, env = "MPD_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TableOutArgs {
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Emit a JSON report instead of CSV.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimatorArgs {
    /// Kernel family.
    #[arg(long, value_enum, default_value_t = Family::PolyTail)]
    pub family: Family,
    /// Tail exponent of the poly-tail kernel.
    #[arg(long, default_value_t = 5.0)]
    pub rho: f64,
    /// Kernel bandwidth.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Exponent of the distance.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Quadrature grid as lo:hi:step, once for all axes or once per axis.
    #[arg(long = "grid", allow_hyphen_values = true)]
    pub grid: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimArgs {
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Draws from the limit law.
    #[arg(long, default_value_t = 1000)]
    pub sims: usize,
    /// Limit simulation method.
    #[arg(long, value_enum, default_value_t = Method::Multiplier)]
    pub method: Method,
}

#[derive(Debug, Args, Serialize)]
pub struct GeneratorArgs {
    /// Generator id: random_walk, hermite, shift, cross_dim, uniform, gauss_markov, cashflow.
    #[arg(long)]
    pub id: String,
    /// Dimension for random_walk, shift and uniform.
    #[arg(long, default_value_t = 1)]
    pub dims: usize,
    /// Hermite order.
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    /// Shift size.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub epsilon: f64,
    /// Coefficient of the Gaussian chain.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub kappa: f64,
    /// Coefficient assumed by the lifted kernel (defaults to --kappa).
    #[arg(long, allow_hyphen_values = true)]
    pub kernel_kappa: Option<f64>,
    /// Discount rate of the cash-flow chain.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Jump intensity of the cash-flow chain.
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    /// Shape of the jump sizes.
    #[arg(long, default_value_t = 2.0)]
    pub gamma_shape: f64,
    /// Scale of the jump sizes.
    #[arg(long, default_value_t = 3.0)]
    pub gamma_scale: f64,
    /// Clip generated values to [-bound, bound].
    #[arg(long)]
    pub bounded: bool,
    #[arg(long, default_value_t = 10.0)]
    pub bound: f64,
    /// Use Monte Carlo for the lifted kernel with this many inner draws.
    #[arg(long)]
    pub inner_draws: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub generator: GeneratorArgs,
    /// Number of pairs.
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    /// Pairs CSV with header x1..xd,y1..yd (stdin when absent or "-").
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Choose sigma from these candidates (all >= 1) before testing.
    #[arg(long, value_delimiter = ',')]
    pub select_sigma: Option<Vec<f64>>,
    /// Take the critical value from a saved limit distribution.
    #[arg(long, conflicts_with = "critical_value")]
    pub limit: Option<PathBuf>,
    /// Use this critical value instead of simulating one.
    #[arg(long)]
    pub critical_value: Option<f64>,
    /// Map X and Y affinely onto [0, 1]^d (per axis, shared by X and Y) first.
    #[arg(long)]
    pub rescale_unit_cube: bool,
    /// Exit with status 2 when the hypothesis is rejected.
    #[arg(long)]
    pub fail_on_reject: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CriticalArgs {
    /// Dimension of the random-walk covariance sample.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Pairs used for the covariance instead of a random-walk sample.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Size of the random-walk covariance sample.
    #[arg(long, default_value_t = 100)]
    pub cov_samples: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Save the simulated distribution as JSON.
    #[arg(long)]
    pub save: Option<PathBuf>,
    /// Reuse or store distributions in this directory, keyed by configuration digest.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PowerArgs {
    /// shift (levels are shift sizes) or hermite (levels are orders).
    #[arg(long)]
    pub id: String,
    /// Perturbation levels.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub levels: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Dimension for the shift generator.
    #[arg(long, default_value_t = 1)]
    pub dims: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: TableOutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergeArgs {
    #[arg(long, default_value = "uniform")]
    pub id: String,
    #[arg(long, default_value_t = 1)]
    pub dims: usize,
    /// Ascending sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    /// Also compute the adapted empirical distance.
    #[arg(long)]
    pub adapted: bool,
    /// Cells per axis are ceil(n^r); default r = 1/(d+2).
    #[arg(long)]
    pub r_exponent: Option<f64>,
    /// Interval lo:hi mapped onto [0, 1] for the adapted estimator.
    #[arg(long, default_value = "-1:1", allow_hyphen_values = true)]
    pub unit_cube_bounds: String,
    /// Rescale each sample by its own range instead of --unit-cube-bounds.
    #[arg(long)]
    pub rescale_unit_cube: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: TableOutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BandwidthArgs {
    #[command(subcommand)]
    pub action: BandwidthAction,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthAction {
    /// Pick the sigma maximizing the statistic.
    Select(SelectArgs),
    /// Statistic growth under a sigma_n rule.
    Probe(ProbeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Candidate bandwidths, all >= 1.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 80.0, 100.0])]
    pub candidates: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Subcritical,
    Supercritical,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// Hermite order of the bounded alternative (and of the sigma rule).
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    /// Use the bounded random-walk null instead of the Hermite alternative.
    #[arg(long)]
    pub null: bool,
    #[arg(long, value_delimiter = ',', required = true)]
    pub ns: Vec<usize>,
    #[arg(long, value_enum)]
    pub rule: Rule,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: TableOutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PricerKind {
    Consistent,
    Bs,
}

#[derive(Debug, Args, Serialize)]
pub struct FinanceArgs {
    #[arg(long, value_enum, default_value_t = PricerKind::Consistent)]
    pub pricer: PricerKind,
    /// Black–Scholes volatility for --pricer bs.
    #[arg(long, default_value_t = 0.6)]
    pub bs_vol: f64,
    /// Heston parameters as JSON (defaults when absent).
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1000)]
    pub inner: usize,
    /// Pricing date.
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    /// Maturity.
    #[arg(long = "T", default_value_t = 1.0)]
    pub maturity: f64,
    /// Strike.
    #[arg(long = "K", default_value_t = 1.0)]
    pub strike: f64,
    #[arg(long, default_value_t = 100)]
    pub steps_per_unit: usize,
    /// Use this critical value instead of simulating one.
    #[arg(long)]
    pub critical_value: Option<f64>,
    /// Exit with status 2 when the hypothesis is rejected.
    #[arg(long)]
    pub fail_on_reject: bool,
    /// Also write the pairs as CSV.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct MarkovArgs {
    /// gauss_markov or cashflow.
    #[arg(long, default_value = "gauss_markov")]
    pub chain: String,
    /// Number of pairs.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub kappa: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub kernel_kappa: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma_shape: f64,
    #[arg(long, default_value_t = 3.0)]
    pub gamma_scale: f64,
    /// Use Monte Carlo for the lifted kernel with this many inner draws.
    #[arg(long)]
    pub inner_draws: Option<usize>,
    /// Use this critical value instead of simulating one.
    #[arg(long)]
    pub critical_value: Option<f64>,
    /// Exit with status 2 when the hypothesis is rejected.
    #[arg(long)]
    pub fail_on_reject: bool,
    /// Also write the pairs as CSV.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}
