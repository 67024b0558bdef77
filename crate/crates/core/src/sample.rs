//! Paired samples `(X_i, Y_i)` in `R^d x R^d` and their CSV representation.
//!
//! CSV layout: header `x1,...,xd,y1,...,yd`, one row per pair, '.' decimal
//! separator, no index column.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MpdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    dim: usize,
    /// Row-major `n x d`.
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PairedSample {
    /// Builds a sample from row-major buffers.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(MpdError::Shape("dimension must be at least 1".into()));
        }
        if xs.len() != ys.len() {
            return Err(MpdError::Shape(format!(
                "xs has {} entries but ys has {}",
                xs.len(),
                ys.len()
            )));
        }
        if !xs.len().is_multiple_of(dim) {
            return Err(MpdError::Shape(format!(
                "{} entries do not form rows of length {dim}",
                xs.len()
            )));
        }
        if xs.is_empty() {
            return Err(MpdError::EmptySample);
        }
        for (k, (x, y)) in xs.iter().zip(&ys).enumerate() {
            if !x.is_finite() {
                return Err(MpdError::NonFinite { row: k / dim, column: k % dim });
            }
            if !y.is_finite() {
                return Err(MpdError::NonFinite { row: k / dim, column: dim + k % dim });
            }
        }
        Ok(Self { dim, xs, ys })
    }

    pub fn from_rows(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(MpdError::Shape("row counts differ".into()));
        }
        let dim = xs.first().map(Vec::len).ok_or(MpdError::EmptySample)?;
        if xs.iter().chain(ys).any(|r| r.len() != dim) {
            return Err(MpdError::Shape("ragged rows".into()));
        }
        Self::new(xs.concat(), ys.concat(), dim)
    }

    /// One-dimensional convenience constructor.
    pub fn from_1d(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::new(xs, ys, 1)
    }

    pub fn len(&self) -> usize {
        self.xs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Row-major `Y - X`.
    pub fn differences(&self) -> Vec<f64> {
        self.ys.iter().zip(&self.xs).map(|(y, x)| y - x).collect()
    }

    /// Rows `[start, end)` as a new sample.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let d = self.dim;
        Self::new(
            self.xs[start * d..end * d].to_vec(),
            self.ys[start * d..end * d].to_vec(),
            d,
        )
    }

    /// Keeps only coordinate `j` of both X and Y.
    pub fn coordinate(&self, j: usize) -> Result<Self> {
        if j >= self.dim {
            return Err(MpdError::Shape(format!("coordinate {j} out of range")));
        }
        let xs = (0..self.len()).map(|i| self.x(i)[j]).collect();
        let ys = (0..self.len()).map(|i| self.y(i)[j]).collect();
        Self::new(xs, ys, 1)
    }

    /// Applies the same translation to X and Y.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(MpdError::Shape("shift has the wrong dimension".into()));
        }
        let d = self.dim;
        let add = |v: &Vec<f64>| -> Vec<f64> {
            v.iter().enumerate().map(|(k, a)| a + shift[k % d]).collect()
        };
        Self::new(add(&self.xs), add(&self.ys), d)
    }

    /// Reorders rows by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut xs = Vec::with_capacity(self.xs.len());
        let mut ys = Vec::with_capacity(self.ys.len());
        for &i in perm {
            xs.extend_from_slice(self.x(i));
            ys.extend_from_slice(self.y(i));
        }
        Self::new(xs, ys, self.dim)
    }

    /// Concatenates `times` copies of the sample.
    pub fn repeated(&self, times: usize) -> Result<Self> {
        Self::new(self.xs.repeat(times), self.ys.repeat(times), self.dim)
    }

    /// Maps both coordinates into `[0,1]^d` with one affine map per axis,
    /// shared by X and Y so that martingality is preserved.
    pub fn rescaled_unit_cube(&self) -> Result<(Self, Vec<(f64, f64)>)> {
        let d = self.dim;
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for (k, v) in self.xs.iter().chain(&self.ys).enumerate() {
            let b = &mut bounds[k % d];
            b.0 = b.0.min(*v);
            b.1 = b.1.max(*v);
        }
        let map = |v: &Vec<f64>| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(k, a)| {
                    let (lo, hi) = bounds[k % d];
                    if hi > lo {
                        ((a - lo) / (hi - lo)).clamp(0.0, 1.0)
                    } else {
                        0.5
                    }
                })
                .collect()
        };
        Ok((Self::new(map(&self.xs), map(&self.ys), d)?, bounds))
    }

    /// SHA-256 over the dimension and the little-endian bits of every entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in self.xs.iter().chain(&self.ys) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| csv_error(1, 0, e.to_string()))?
            .clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(MpdError::EmptySample);
        }
        if header.len() % 2 != 0 {
            return Err(csv_error(1, header.len(), "header must hold x1..xd,y1..yd".into()));
        }
        let d = header.len() / 2;
        for (j, name) in header.iter().enumerate() {
            let expected = if j < d { format!("x{}", j + 1) } else { format!("y{}", j - d + 1) };
            if name != expected {
                return Err(csv_error(1, j + 1, format!("expected column '{expected}', found '{name}'")));
            }
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let line = r + 2;
            let rec = rec.map_err(|e| csv_error(line, 0, e.to_string()))?;
            if rec.len() != 2 * d {
                return Err(csv_error(line, rec.len(), format!("expected {} fields", 2 * d)));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| csv_error(line, j + 1, format!("cannot parse '{field}' as a number")))?;
                if !v.is_finite() {
                    return Err(csv_error(line, j + 1, "non-finite value".into()));
                }
                if j < d {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        if xs.is_empty() {
            return Err(MpdError::EmptySample);
        }
        Self::new(xs, ys, d)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim;
        let header: Vec<String> = (1..=d)
            .map(|j| format!("x{j}"))
            .chain((1..=d).map(|j| format!("y{j}")))
            .collect();
        w.write_record(&header).map_err(|e| csv_error(1, 0, e.to_string()))?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .x(i)
                .iter()
                .chain(self.y(i))
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row).map_err(|e| csv_error(i + 2, 0, e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(row: usize, column: usize, message: String) -> MpdError {
    MpdError::Csv { row, column, message }
}
