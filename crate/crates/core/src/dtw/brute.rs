//! Exhaustive reference over all warping paths.
//!
//! Exponential in `min(n, m)`; meant for grids up to about 6×6 where it
//! serves as an independent check of the dynamic programs.

use nalgebra::DMatrix;

/// Every warping path from `(0,0)` to `(n−1,m−1)` as a list of cells.
pub fn enumerate_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(
        cell: (usize, usize),
        n: usize,
        m: usize,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        cur.push(cell);
        if cell == (n - 1, m - 1) {
            out.push(cur.clone());
        } else {
            let (i, j) = cell;
            if i + 1 < n && j + 1 < m {
                walk((i + 1, j + 1), n, m, cur, out);
            }
            if i + 1 < n {
                walk((i + 1, j), n, m, cur, out);
            }
            if j + 1 < m {
                walk((i, j + 1), n, m, cur, out);
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    if n > 0 && m > 0 {
        walk((0, 0), n, m, &mut Vec::new(), &mut out);
    }
    out
}

fn path_sum(path: &[(usize, usize)], x: &DMatrix<f64>) -> f64 {
    path.iter().map(|&c| x[c]).sum()
}

/// Gibbs weights `exp(−⟨A,Δ⟩/γ)/Z` of all paths, plus `−γ log Z`.
fn gibbs(delta: &DMatrix<f64>, gamma: f64) -> (Vec<Vec<(usize, usize)>>, Vec<f64>, f64) {
    let paths = enumerate_paths(delta.nrows(), delta.ncols());
    let costs: Vec<f64> = paths.iter().map(|p| path_sum(p, delta)).collect();
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = costs.iter().map(|c| (-(c - lo) / gamma).exp()).collect();
    let z: f64 = w.iter().sum();
    let value = lo - gamma * z.ln();
    (paths, w.into_iter().map(|x| x / z).collect(), value)
}

pub fn soft_dtw(delta: &DMatrix<f64>, gamma: f64) -> f64 {
    gibbs(delta, gamma).2
}

pub fn soft_alignment(delta: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let (paths, probs, _) = gibbs(delta, gamma);
    let mut a = DMatrix::zeros(delta.nrows(), delta.ncols());
    for (p, w) in paths.iter().zip(probs) {
        for &c in p {
            a[c] += w;
        }
    }
    a
}

/// Expected `⟨A, Ω⟩` under the Gibbs distribution.
pub fn tdi_soft(delta: &DMatrix<f64>, omega: &DMatrix<f64>, gamma: f64) -> f64 {
    let (paths, probs, _) = gibbs(delta, gamma);
    paths
        .iter()
        .zip(probs)
        .map(|(p, w)| w * path_sum(p, omega))
        .sum()
}

/// Minimum path cost.
pub fn hard_dtw(delta: &DMatrix<f64>) -> f64 {
    enumerate_paths(delta.nrows(), delta.ncols())
        .iter()
        .map(|p| path_sum(p, delta))
        .fold(f64::INFINITY, f64::min)
}
