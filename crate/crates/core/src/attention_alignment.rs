//! Cross-attention dispersion and the relative alignment ratio.
//!
//! For a row-stochastic matrix `alpha` (target rows, source columns) the
//! per-row centre is `mu_i = sum_j j * alpha_ij` with 0-based `j`, and
//!
//! ```text
//! var = 1 / (|I| |J|) * sum_i sum_j alpha_ij (mu_i - j)^2
//! ```
//!
//! The relative alignment of a subset is the mean variance of the compressed
//! system's matrices divided by the mean variance of the baseline's.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Averaged cross-attention, `rows` target positions by `cols` source positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AttentionMatrix {
    rows: usize,
    cols: usize,
    alpha: Vec<f64>,
}

impl AttentionMatrix {
    pub fn new(rows: usize, cols: usize, alpha: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("attention matrix needs at least one row and column".into()));
        }
        if alpha.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "attention matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                alpha.len()
            )));
        }
        if let Some(v) = alpha.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!("attention weight {v} is negative or non-finite")));
        }
        for (i, row) in alpha.chunks(cols).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("attention row {i} sums to {s}")));
            }
        }
        Ok(Self { rows, cols, alpha })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument("ragged attention matrix".into()));
        }
        Self::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.alpha[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.alpha[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.alpha.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    /// Divides every row by its sum.
    pub fn renormalized(&self) -> Self {
        let mut alpha = self.alpha.clone();
        for row in alpha.chunks_mut(self.cols) {
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Self { rows: self.rows, cols: self.cols, alpha }
    }
}

impl TryFrom<Vec<Vec<f64>>> for AttentionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<AttentionMatrix> for Vec<Vec<f64>> {
    fn from(m: AttentionMatrix) -> Self {
        m.to_rows()
    }
}

pub fn attention_variance(m: &AttentionMatrix) -> f64 {
    let m = m.renormalized();
    let mut total = 0.0;
    for i in 0..m.rows {
        let row = m.row(i);
        let mu: f64 = row.iter().enumerate().map(|(j, a)| j as f64 * a).sum();
        total += row.iter().enumerate().map(|(j, a)| a * (mu - j as f64).powi(2)).sum::<f64>();
    }
    total / (m.rows * m.cols) as f64
}

/// Ratio of mean compressed variance to mean baseline variance over paired matrices.
pub fn relative_alignment(pairs: &[(AttentionMatrix, AttentionMatrix)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("relative alignment subset".into()));
    }
    let vars: Vec<(f64, f64)> =
        pairs.par_iter().map(|(base, comp)| (attention_variance(base), attention_variance(comp))).collect();
    let n = vars.len() as f64;
    let base = vars.iter().map(|v| v.0).sum::<f64>() / n;
    let comp = vars.iter().map(|v| v.1).sum::<f64>() / n;
    if base <= 0.0 {
        return Err(Error::Degenerate("mean baseline attention variance is zero".into()));
    }
    Ok(comp / base)
}
