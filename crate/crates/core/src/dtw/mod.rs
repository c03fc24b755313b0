//! Dynamic time warping: cost matrices, hard and soft DTW, soft alignments,
//! temporal distortion indices and second-order quantities.

pub mod brute;
mod cost;
mod hard;
mod omega;
mod soft;

use nalgebra::DMatrix;

pub use cost::{cost_backward, cost_matrix, CostKind, CostMatrix};
pub use hard::{hard_dtw, tdi_hard};
pub use omega::{OmegaKind, OmegaMatrix, BAND_PENALTY};
pub(crate) use soft::check_gamma;
pub use soft::{dtw_hvp, soft_alignment, soft_dtw, soft_min, tdi_soft, SoftDtw, BORDER};

use soft::check_omega;

use crate::error::{param_err, Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Hard,
    Soft,
}

/// Binary warping path or soft (expected) alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    pub a: DMatrix<f64>,
    pub kind: PathKind,
}

impl PathMatrix {
    /// Cells of a hard path in traversal order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let (n, m) = self.a.shape();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if self.a[(i, j)] > 0.5 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Gradient of `soft_dtw(Δ(y_pred, y_true))` with respect to `y_pred`.
///
/// Returned time-major, shaped like `y_pred`.
pub fn soft_dtw_grad_wrt_series(
    y_pred: &TimeSeries,
    y_true: &TimeSeries,
    kind: CostKind,
    gamma: f64,
) -> Result<Vec<f64>> {
    let delta = cost_matrix(y_pred, y_true, kind, gamma)?;
    let a = soft_alignment(&delta, gamma)?;
    Ok(cost_backward(y_pred, y_true, kind, gamma, &a.a)?.0)
}

/// Number of warping paths in an `n×m` grid.
pub fn delannoy(n: usize, m: usize) -> Result<u64> {
    if n == 0 || m == 0 {
        return param_err("delannoy needs n, m >= 1");
    }
    let mut row = vec![1u64; m];
    for _ in 1..n {
        let mut next = vec![1u64; m];
        for j in 1..m {
            next[j] = row[j]
                .checked_add(next[j - 1])
                .and_then(|v| v.checked_add(row[j - 1]))
                .ok_or_else(|| Error::Overflow(format!("delannoy({n}, {m}) exceeds 64 bits")))?;
        }
        row = next;
    }
    Ok(row[m - 1])
}

/// `ln delannoy(n, m)`, computed in log space so it never overflows.
pub fn ln_delannoy(n: usize, m: usize) -> f64 {
    if n == 0 || m == 0 {
        return f64::NEG_INFINITY;
    }
    let lse = |v: &[f64]| {
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi + v.iter().map(|x| (x - hi).exp()).sum::<f64>().ln()
    };
    let mut row = vec![0.0f64; m];
    for _ in 1..n {
        let mut next = vec![0.0f64; m];
        for j in 1..m {
            next[j] = lse(&[row[j], next[j - 1], row[j - 1]]);
        }
        row = next;
    }
    row[m - 1]
}
