use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::series::TimeSeries;

/// Pointwise dissimilarity used to fill the pairwise cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Squared euclidean distance.
    #[default]
    Euclidean,
    /// L1 distance.
    L1,
    /// `γ·[d + log(2 − e^{−d})]` with `d` the squared euclidean distance.
    /// `exp(−Δ/γ)` is the kernel `g/(1−g)` with `g = ½e^{−d}`, which keeps the
    /// derived shape and time kernels positive semi-definite.
    HalfGaussian,
}

impl std::str::FromStr for CostKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(CostKind::Euclidean),
            "l1" => Ok(CostKind::L1),
            "half_gaussian" | "half-gaussian" => Ok(CostKind::HalfGaussian),
            other => param_err(format!("unknown cost kind `{other}`")),
        }
    }
}

/// `n×m` pairwise cost matrix between two series.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub delta: DMatrix<f64>,
    pub kind: CostKind,
    pub gamma: f64,
}

impl CostMatrix {
    /// Wraps an arbitrary matrix, e.g. a blended or hand-built cost.
    pub fn from_matrix(delta: DMatrix<f64>) -> Self {
        Self {
            delta,
            kind: CostKind::Euclidean,
            gamma: 1.0,
        }
    }

    pub fn nrows(&self) -> usize {
        self.delta.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.delta.ncols()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn half_gaussian(d: f64, gamma: f64) -> f64 {
    // ln(2 − e^{−d}) = ln(1 + (1 − e^{−d})) = ln_1p(−expm1(−d))
    gamma * (d + (-(-d).exp_m1()).ln_1p())
}

/// Pairwise cost `Δ_ij = c(y_i, z_j)`.
pub fn cost_matrix(y: &TimeSeries, z: &TimeSeries, kind: CostKind, gamma: f64) -> Result<CostMatrix> {
    y.check_same_dim(z)?;
    if kind == CostKind::HalfGaussian && !(gamma > 0.0) {
        return param_err(format!("half-Gaussian cost needs gamma > 0, got {gamma}"));
    }
    let (n, m) = (y.len(), z.len());
    let delta = DMatrix::from_fn(n, m, |i, j| {
        let (a, b) = (y.point(i), z.point(j));
        match kind {
            CostKind::Euclidean => sq_dist(a, b),
            CostKind::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            CostKind::HalfGaussian => half_gaussian(sq_dist(a, b), gamma),
        }
    });
    Ok(CostMatrix { delta, kind, gamma })
}

/// Pulls a gradient with respect to the cost matrix back onto both series.
///
/// Returns `(∂/∂y, ∂/∂z)` as time-major arrays shaped like the inputs.
pub fn cost_backward(
    y: &TimeSeries,
    z: &TimeSeries,
    kind: CostKind,
    gamma: f64,
    grad_delta: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    y.check_same_dim(z)?;
    let (n, m, d) = (y.len(), z.len(), y.dim());
    if grad_delta.shape() != (n, m) {
        return dim_err(format!(
            "cost gradient is {:?}, expected ({n}, {m})",
            grad_delta.shape()
        ));
    }
    let mut gy = vec![0.0; n * d];
    let mut gz = vec![0.0; m * d];
    for i in 0..n {
        let a = y.point(i);
        for j in 0..m {
            let g = grad_delta[(i, j)];
            if g == 0.0 {
                continue;
            }
            let b = z.point(j);
            let scale = match kind {
                CostKind::Euclidean => 2.0,
                CostKind::L1 => 1.0,
                CostKind::HalfGaussian => {
                    let e = (-sq_dist(a, b)).exp();
                    gamma * 2.0 / (2.0 - e) * 2.0
                }
            };
            for c in 0..d {
                let diff = a[c] - b[c];
                let local = match kind {
                    // subgradient 0 at exact ties
                    CostKind::L1 => {
                        if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    _ => diff,
                };
                let v = g * scale * local;
                gy[i * d + c] += v;
                gz[j * d + c] -= v;
            }
        }
    }
    Ok((gy, gz))
}
