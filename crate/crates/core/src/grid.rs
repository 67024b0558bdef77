//! Rectangular quadrature grids.
//!
//! Nodes sit at `lower + k * step` for `k = 0..=K` on every axis, with
//! `K = floor((upper - lower) / step)`. Each node carries the weight
//! `prod(step)`, i.e. the node is the midpoint of its cell.

use serde::{Deserialize, Serialize};

use crate::error::{MpdError, Result};

/// Default cap on the total number of nodes (2^24).
pub const DEFAULT_NODE_CAP: u64 = 1 << 24;

/// Minimum number of grid steps per bandwidth used by [`GridSpec::for_bandwidth`].
pub const BANDWIDTH_NODES_PER_SIGMA: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: Vec<f64>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, step: Vec<f64>) -> Result<Self> {
        let g = Self { lower, upper, step };
        g.validate_shape()?;
        Ok(g)
    }

    /// The same `[lo, hi]` with spacing `step` on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, step: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
            step: vec![step; dim],
        }
    }

    /// The integer grid of `[-50, 50]^dim`.
    pub fn default_for(dim: usize) -> Self {
        Self::cube(dim, -50.0, 50.0, 1.0)
    }

    /// Grid for a kernel of bandwidth `sigma`, taking `self` as the grid for
    /// unit bandwidth. Bounds grow with `max(1, sigma)` so the kernel tails stay
    /// inside; the step is kept until `sigma` exceeds `BANDWIDTH_NODES_PER_SIGMA`
    /// steps and then grows with `sigma`, which keeps both the data scale and
    /// the kernel scale resolved.
    pub fn for_bandwidth(&self, sigma: f64) -> Self {
        let span = sigma.max(1.0);
        let coarsen = |step: f64| step * (sigma / (BANDWIDTH_NODES_PER_SIGMA * step)).max(1.0);
        Self {
            lower: self.lower.iter().map(|a| a * span).collect(),
            upper: self.upper.iter().map(|a| a * span).collect(),
            step: self.step.iter().map(|h| coarsen(*h)).collect(),
        }
    }

    /// Parses `lo:hi:step` specs, one per axis or a single one broadcast to `dim` axes.
    pub fn parse(specs: &[String], dim: usize) -> Result<Self> {
        let parse_one = |s: &str| -> Result<(f64, f64, f64)> {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(MpdError::Parameter(format!("grid '{s}' is not lo:hi:step")));
            }
            let p = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| MpdError::Parameter(format!("grid '{s}': cannot parse '{t}'")))
            };
            Ok((p(parts[0])?, p(parts[1])?, p(parts[2])?))
        };
        let axes: Vec<(f64, f64, f64)> = specs.iter().map(|s| parse_one(s)).collect::<Result<_>>()?;
        let axes = match axes.len() {
            0 => return Ok(Self::default_for(dim)),
            1 => vec![axes[0]; dim],
            k if k == dim => axes,
            k => {
                return Err(MpdError::Parameter(format!(
                    "{k} grid specs given for dimension {dim}"
                )))
            }
        };
        Self::new(
            axes.iter().map(|a| a.0).collect(),
            axes.iter().map(|a| a.1).collect(),
            axes.iter().map(|a| a.2).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate_shape(&self) -> Result<()> {
        let d = self.lower.len();
        if d == 0 || self.upper.len() != d || self.step.len() != d {
            return Err(MpdError::Shape("grid bounds and steps must share one dimension".into()));
        }
        for j in 0..d {
            if !(self.lower[j] < self.upper[j]) || !self.lower[j].is_finite() || !self.upper[j].is_finite() {
                return Err(MpdError::Parameter(format!(
                    "grid axis {j}: lower {} must be below upper {}",
                    self.lower[j], self.upper[j]
                )));
            }
            if !(self.step[j] > 0.0) || !self.step[j].is_finite() {
                return Err(MpdError::Parameter(format!("grid axis {j}: step must be positive")));
            }
        }
        Ok(())
    }

    /// Checks the shape and the node cap.
    pub fn validate(&self, cap: u64) -> Result<()> {
        self.validate_shape()?;
        let nodes = self.node_count_u128();
        if nodes > cap as u128 {
            let ratio = (nodes as f64 / cap as f64).powf(1.0 / self.dim() as f64);
            return Err(MpdError::GridTooLarge {
                nodes,
                cap,
                suggested_step: self.step.iter().map(|s| s * ratio * 1.01).collect(),
            });
        }
        Ok(())
    }

    pub fn axis_counts(&self) -> Vec<usize> {
        (0..self.dim())
            .map(|j| ((self.upper[j] - self.lower[j]) / self.step[j] + 1e-9).floor() as usize + 1)
            .collect()
    }

    fn node_count_u128(&self) -> u128 {
        self.axis_counts().iter().map(|&c| c as u128).product()
    }

    pub fn node_count(&self) -> usize {
        self.axis_counts().iter().product()
    }

    /// Quadrature weight of every node.
    pub fn cell_volume(&self) -> f64 {
        self.step.iter().product()
    }

    /// Coordinates of node `index` (last axis fastest).
    pub fn node_into(&self, counts: &[usize], mut index: usize, out: &mut [f64]) {
        for j in (0..self.dim()).rev() {
            let k = index % counts[j];
            index /= counts[j];
            out[j] = self.lower[j] + k as f64 * self.step[j];
        }
    }

    /// All node coordinates, row-major `m x d`.
    pub fn nodes(&self) -> Vec<f64> {
        let counts = self.axis_counts();
        let d = self.dim();
        let m = self.node_count();
        let mut out = vec![0.0; m * d];
        for (i, row) in out.chunks_mut(d).enumerate() {
            self.node_into(&counts, i, row);
        }
        out
    }
}
