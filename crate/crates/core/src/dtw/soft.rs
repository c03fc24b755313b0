//! Soft-DTW forward recursion, its reverse (alignment) recursion and the
//! directional-derivative recursion giving Hessian-vector products.
//!
//! All three sweeps are `O(nm)`. The forward table carries a sentinel row and
//! column; sentinel cells are never visited by the reverse sweeps.

use nalgebra::DMatrix;

use super::{CostMatrix, OmegaMatrix, PathKind, PathMatrix};
use crate::error::{dim_err, param_err, Result};

/// Stand-in for `+∞` on the borders of the forward table.
pub const BORDER: f64 = 1e30;

/// `−γ log Σ_k exp(−a_k/γ)`, shifted by the minimum.
pub fn soft_min(values: &[f64], gamma: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = values.iter().map(|&a| (-(a - lo) / gamma).exp()).sum();
    lo - gamma * s.ln()
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return param_err(format!("gamma must be a positive finite number, got {gamma}"));
    }
    Ok(())
}

/// Forward table of the soft-DTW recursion for one cost matrix.
///
/// Keeps `r` and the soft-min weights of every cell for reuse by
/// [`SoftDtw::alignment`] and [`SoftDtw::hvp`].
#[derive(Debug, Clone)]
pub struct SoftDtw<'a> {
    delta: &'a DMatrix<f64>,
    gamma: f64,
    /// `(n+1)×(m+1)` row-major; `r[0][0] = 0`, other border cells `BORDER`.
    r: Vec<f64>,
    /// Per inner cell (row-major), the probability that its soft-min picked
    /// the predecessor `[(i−1,j), (i,j−1), (i−1,j−1)]`.
    weights: Vec<[f64; 3]>,
}

/// Soft-min weights below `exp(−SHIFT_CUTOFF)` (about 1e-30 relative to the
/// dominant predecessor) are dropped.
const SHIFT_CUTOFF: f64 = 69.0;

/// Reverse-sweep accumulators below this are flushed to zero so the sweeps
/// never run on subnormal numbers.
const FLUSH: f64 = 1e-250;

/// `exp(−d/γ)` for `d ≥ 0`, exact at `d = 0`.
#[inline]
fn shifted_exp(d: f64, inv_gamma: f64) -> f64 {
    let x = d * inv_gamma;
    if x == 0.0 {
        1.0
    } else if x > SHIFT_CUTOFF {
        0.0
    } else {
        (-x).exp()
    }
}

#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < FLUSH {
        0.0
    } else {
        x
    }
}

const UP: usize = 0;
const LEFT: usize = 1;
const DIAG: usize = 2;

impl<'a> SoftDtw<'a> {
    pub fn forward(delta: &'a DMatrix<f64>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let (n, m) = delta.shape();
        if n == 0 || m == 0 {
            return dim_err("empty cost matrix");
        }
        let w = m + 1;
        let inv_gamma = 1.0 / gamma;
        let mut r = vec![BORDER; (n + 1) * w];
        let mut weights = vec![[0.0; 3]; n * m];
        r[0] = 0.0;
        // anti-diagonal order: cells of one diagonal are independent
        for d in 2..=n + m {
            for i in d.saturating_sub(m).max(1)..=(d - 1).min(n) {
                let j = d - i;
                let prev = [r[(i - 1) * w + j], r[i * w + j - 1], r[(i - 1) * w + j - 1]];
                let lo = prev[0].min(prev[1]).min(prev[2]);
                let e = prev.map(|a| shifted_exp(a - lo, inv_gamma));
                let total = e[0] + e[1] + e[2];
                r[i * w + j] = delta[(i - 1, j - 1)] + lo - gamma * total.ln();
                weights[(i - 1) * m + j - 1] = e.map(|x| x / total);
            }
        }
        Ok(Self { delta, gamma, r, weights })
    }

    fn width(&self) -> usize {
        self.delta.ncols() + 1
    }

    /// `r` at 1-based table coordinates.
    #[inline]
    fn r_at(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.width() + j]
    }

    pub fn value(&self) -> f64 {
        let (n, m) = self.delta.shape();
        self.r_at(n, m)
    }

    /// Soft-min weight of predecessor `slot` at inner cell `(i, j)`.
    #[inline]
    fn weight(&self, i: usize, j: usize, slot: usize) -> f64 {
        self.weights[i * self.delta.ncols() + j][slot]
    }

    /// Expected alignment `∇_Δ soft_dtw`, by the reverse recursion.
    pub fn alignment(&self) -> DMatrix<f64> {
        let (n, m) = self.delta.shape();
        let mut e = DMatrix::zeros(n, m);
        e[(n - 1, m - 1)] = 1.0;
        for i in (0..n).rev() {
            for j in (0..m).rev() {
                if i == n - 1 && j == m - 1 {
                    continue;
                }
                let mut acc = 0.0;
                if i + 1 < n {
                    acc += e[(i + 1, j)] * self.weight(i + 1, j, UP);
                }
                if j + 1 < m {
                    acc += e[(i, j + 1)] * self.weight(i, j + 1, LEFT);
                }
                if i + 1 < n && j + 1 < m {
                    acc += e[(i + 1, j + 1)] * self.weight(i + 1, j + 1, DIAG);
                }
                e[(i, j)] = flush(acc);
            }
        }
        e
    }

    /// Hessian of soft-DTW (w.r.t. `Δ`) applied to `direction`.
    ///
    /// `alignment` must be the output of [`SoftDtw::alignment`] for this table.
    /// Runs a forward sweep for the directional derivative of `r` and then the
    /// differentiated reverse sweep.
    pub fn hvp(&self, alignment: &DMatrix<f64>, direction: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, m) = self.delta.shape();
        if direction.shape() != (n, m) || alignment.shape() != (n, m) {
            return dim_err(format!(
                "direction {:?} does not match cost matrix ({n}, {m})",
                direction.shape()
            ));
        }
        let inv_g = 1.0 / self.gamma;
        // directional derivative of r on inner cells
        let mut rdot = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let mut acc = direction[(i, j)];
                if i > 0 {
                    acc += self.weight(i, j, UP) * rdot[(i - 1, j)];
                }
                if j > 0 {
                    acc += self.weight(i, j, LEFT) * rdot[(i, j - 1)];
                }
                if i > 0 && j > 0 {
                    acc += self.weight(i, j, DIAG) * rdot[(i - 1, j - 1)];
                }
                rdot[(i, j)] = flush(acc);
            }
        }
        let mut edot = DMatrix::zeros(n, m);
        for i in (0..n).rev() {
            for j in (0..m).rev() {
                if i == n - 1 && j == m - 1 {
                    continue;
                }
                let base = rdot[(i, j)];
                let term = |s: (usize, usize), slot: usize| {
                    let w = self.weight(s.0, s.1, slot);
                    let wdot = w * (rdot[s] - direction[s] - base) * inv_g;
                    edot[s] * w + alignment[s] * wdot
                };
                let mut acc = 0.0;
                if i + 1 < n {
                    acc += term((i + 1, j), UP);
                }
                if j + 1 < m {
                    acc += term((i, j + 1), LEFT);
                }
                if i + 1 < n && j + 1 < m {
                    acc += term((i + 1, j + 1), DIAG);
                }
                edot[(i, j)] = flush(acc);
            }
        }
        Ok(edot)
    }
}

/// `−γ log Σ_A exp(−⟨A,Δ⟩/γ)` over all warping paths.
pub fn soft_dtw(delta: &CostMatrix, gamma: f64) -> Result<f64> {
    Ok(SoftDtw::forward(&delta.delta, gamma)?.value())
}

/// Soft alignment `A*_γ = ∇_Δ soft_dtw(Δ)`, the expected path under the
/// Gibbs distribution over warping paths.
pub fn soft_alignment(delta: &CostMatrix, gamma: f64) -> Result<PathMatrix> {
    let a = SoftDtw::forward(&delta.delta, gamma)?.alignment();
    Ok(PathMatrix {
        a,
        kind: PathKind::Soft,
    })
}

/// Smooth temporal distortion index `⟨A*_γ, Ω⟩`.
pub fn tdi_soft(delta: &CostMatrix, omega: &OmegaMatrix, gamma: f64) -> Result<f64> {
    check_omega(delta, omega)?;
    let a = soft_alignment(delta, gamma)?.a;
    Ok(a.component_mul(&omega.omega).sum())
}

/// `∇_Δ ⟨∇_Δ soft_dtw(Δ), Ω⟩`: the backward pass of [`tdi_soft`] w.r.t. `Δ`.
pub fn dtw_hvp(delta: &CostMatrix, omega: &OmegaMatrix, gamma: f64) -> Result<DMatrix<f64>> {
    check_omega(delta, omega)?;
    let table = SoftDtw::forward(&delta.delta, gamma)?;
    let a = table.alignment();
    table.hvp(&a, &omega.omega)
}

pub(crate) fn check_omega(delta: &CostMatrix, omega: &OmegaMatrix) -> Result<()> {
    if omega.omega.shape() != delta.delta.shape() {
        return dim_err(format!(
            "omega is {:?} but cost matrix is {:?}",
            omega.omega.shape(),
            delta.delta.shape()
        ));
    }
    Ok(())
}
