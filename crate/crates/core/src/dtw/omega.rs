use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Penalty used outside a Sakoe-Chiba band in place of `+∞`.
pub const BAND_PENALTY: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaKind {
    DissimQuadratic,
    SimInverseQuadratic,
    SakoeChiba(usize),
    Weighted,
    Custom,
}

/// `n×m` temporal penalty (or similarity) matrix over index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMatrix {
    pub omega: DMatrix<f64>,
    pub kind: OmegaKind,
}

impl OmegaMatrix {
    /// `(i−j)²/n²`: zero on the diagonal, scaled so the index stays
    /// comparable across horizons.
    pub fn dissim_quadratic(n: usize, m: usize) -> Self {
        let scale = (n * n) as f64;
        Self {
            omega: DMatrix::from_fn(n, m, |i, j| sq_gap(i, j) / scale),
            kind: OmegaKind::DissimQuadratic,
        }
    }

    /// `1/((i−j)²+1)`.
    pub fn sim_inverse_quadratic(n: usize, m: usize) -> Self {
        Self {
            omega: DMatrix::from_fn(n, m, |i, j| 1.0 / (sq_gap(i, j) + 1.0)),
            kind: OmegaKind::SimInverseQuadratic,
        }
    }

    /// 0 inside the band `|i−j| ≤ band`, [`BAND_PENALTY`] outside.
    pub fn sakoe_chiba(n: usize, m: usize, band: usize) -> Self {
        Self {
            omega: DMatrix::from_fn(n, m, |i, j| {
                if i.abs_diff(j) > band {
                    BAND_PENALTY
                } else {
                    0.0
                }
            }),
            kind: OmegaKind::SakoeChiba(band),
        }
    }

    /// `f(|i−j|)` for a caller-supplied, typically increasing, weight.
    pub fn weighted(n: usize, m: usize, f: impl Fn(usize) -> f64) -> Self {
        Self {
            omega: DMatrix::from_fn(n, m, |i, j| f(i.abs_diff(j))),
            kind: OmegaKind::Weighted,
        }
    }

    pub fn custom(omega: DMatrix<f64>) -> Self {
        Self {
            omega,
            kind: OmegaKind::Custom,
        }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::custom(DMatrix::zeros(n, m))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            omega: &self.omega * c,
            kind: OmegaKind::Custom,
        }
    }
}

fn sq_gap(i: usize, j: usize) -> f64 {
    let g = i.abs_diff(j) as f64;
    g * g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_kinds() {
        let d = OmegaMatrix::dissim_quadratic(4, 4);
        assert_eq!(d.omega[(0, 0)], 0.0);
        assert_eq!(d.omega[(0, 2)], 4.0 / 16.0);
        assert_eq!(d.omega, d.omega.transpose());

        let s = OmegaMatrix::sim_inverse_quadratic(4, 4);
        assert_eq!(s.omega[(1, 1)], 1.0);
        assert_eq!(s.omega[(0, 1)], 0.5);
        assert!(s.omega.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn band() {
        let b = OmegaMatrix::sakoe_chiba(5, 5, 1);
        assert_eq!(b.omega[(0, 1)], 0.0);
        assert_eq!(b.omega[(0, 2)], BAND_PENALTY);
        let w = OmegaMatrix::weighted(3, 3, |g| g as f64);
        assert_eq!(w.omega[(0, 2)], 2.0);
    }
}
