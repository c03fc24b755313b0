use nalgebra::DMatrix;

use super::{check_omega, CostMatrix, OmegaMatrix, PathKind, PathMatrix};
use crate::error::{dim_err, Result};

/// Minimal-cost warping path and its cost.
///
/// Backtracking breaks ties in favour of the diagonal move, then the move
/// along the first series, then the move along the second.
pub fn hard_dtw(delta: &CostMatrix) -> Result<(f64, PathMatrix)> {
    let d = &delta.delta;
    let (n, m) = d.shape();
    if n == 0 || m == 0 {
        return dim_err("empty cost matrix");
    }
    let mut r = DMatrix::from_element(n + 1, m + 1, f64::INFINITY);
    r[(0, 0)] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = r[(i - 1, j - 1)].min(r[(i - 1, j)]).min(r[(i, j - 1)]);
            r[(i, j)] = d[(i - 1, j - 1)] + best;
        }
    }

    let mut a = DMatrix::zeros(n, m);
    let (mut i, mut j) = (n, m);
    loop {
        a[(i - 1, j - 1)] = 1.0;
        if i == 1 && j == 1 {
            break;
        }
        let diag = r[(i - 1, j - 1)];
        let up = r[(i - 1, j)];
        let left = r[(i, j - 1)];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    Ok((
        r[(n, m)],
        PathMatrix {
            a,
            kind: PathKind::Hard,
        },
    ))
}

/// Temporal distortion index `⟨A*, Ω⟩` of the optimal hard path.
pub fn tdi_hard(delta: &CostMatrix, omega: &OmegaMatrix) -> Result<f64> {
    check_omega(delta, omega)?;
    let (_, path) = hard_dtw(delta)?;
    Ok(path.a.component_mul(&omega.omega).sum())
}
