//! Smoothed empirical martingale projection distance.
//!
//! Given paired observations `(X_i, Y_i)`, the library measures how far the
//! conditional mean `E[Y | X]` is from `X`, turns that distance into a
//! scaled test statistic, and calibrates it against the simulated Gaussian
//! limit. Baselines, data generators and a Heston pricing audit are included.
//!
//! ```
//! use mpd_core::generators::{generate, GeneratorId, GeneratorSpec};
//! use mpd_core::testkit::run_test;
//! use mpd_core::MpdConfig;
//!
//! # fn main() -> mpd_core::Result<()> {
//! let sample = generate(&GeneratorSpec::new(GeneratorId::RandomWalk, 7), 200)?;
//! let cfg = MpdConfig::default_for(sample.dim());
//! let report = run_test(&sample, &cfg, 0.05, 1000, 11)?;
//! assert!(report.statistic >= 0.0 && report.critical_value > 0.0);
//! # Ok(())
//! # }
//! ```

// `!(a >= b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod finance;
pub mod generators;
pub mod grid;
pub mod kernel;
pub mod limit_sim;
pub mod rng;
pub mod sample;
pub mod testkit;

pub use error::{MpdError, Result};
pub use estimator::MpdConfig;
pub use grid::GridSpec;
pub use kernel::{Kernel, KernelFamily, KernelSpec};
pub use limit_sim::{LimitDistribution, LimitMethod};
pub use sample::PairedSample;
