use std::time::Instant;

use dilate::dtw::{cost_matrix, CostKind, OmegaMatrix, SoftDtw};
use dilate::TimeSeries;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub tau: usize,
    pub repeats: usize,
    /// Median seconds of one DP value-and-gradient evaluation.
    pub custom_seconds: f64,
    /// Median seconds of one central finite-difference gradient over Δ.
    pub naive_seconds: f64,
    pub speedup: f64,
    /// Largest |custom − naive| gradient entry, relative to the largest entry.
    pub max_gradient_gap: f64,
}

/// `α·DTW_γ(Δ) + (1−α)·⟨A*_γ(Δ), Ω⟩` and its gradient w.r.t. `Δ` by the DP sweeps.
pub fn dilate_delta_grad(delta: &DMatrix<f64>, omega: &DMatrix<f64>, alpha: f64, gamma: f64) -> Result<(f64, DMatrix<f64>)> {
    let table = SoftDtw::forward(delta, gamma)?;
    let a = table.alignment();
    let temporal = a.component_mul(omega).sum();
    let h = table.hvp(&a, omega)?;
    Ok((alpha * table.value() + (1.0 - alpha) * temporal, a * alpha + h * (1.0 - alpha)))
}

fn dilate_delta_value(delta: &DMatrix<f64>, omega: &DMatrix<f64>, alpha: f64, gamma: f64) -> Result<f64> {
    let table = SoftDtw::forward(delta, gamma)?;
    Ok(alpha * table.value() + (1.0 - alpha) * table.alignment().component_mul(omega).sum())
}

/// Central differences over every entry of `Δ`: `2nm` full evaluations.
pub fn naive_delta_grad(delta: &DMatrix<f64>, omega: &DMatrix<f64>, alpha: f64, gamma: f64, step: f64) -> Result<DMatrix<f64>> {
    let mut d = delta.clone();
    let mut g = DMatrix::zeros(delta.nrows(), delta.ncols());
    for idx in 0..delta.len() {
        let orig = d[idx];
        d[idx] = orig + step;
        let up = dilate_delta_value(&d, omega, alpha, gamma)?;
        d[idx] = orig - step;
        let down = dilate_delta_value(&d, omega, alpha, gamma)?;
        d[idx] = orig;
        g[idx] = (up - down) / (2.0 * step);
    }
    Ok(g)
}

fn median_seconds<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(crate::report::median(&times))
}

/// Times the DP backward against the finite-difference backward per horizon.
pub fn bench_backward(lengths: &[usize], repeats: usize, alpha: f64, gamma: f64, seed: u64) -> Result<Vec<BenchRow>> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(CliError::usage("bench needs a non-empty list of positive lengths"));
    }
    if repeats == 0 {
        return Err(CliError::usage("bench repeats must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(lengths.len());
    for &tau in lengths {
        let mut series = || TimeSeries::univariate((0..tau).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (y, z) = (series()?, series()?);
        let delta = cost_matrix(&y, &z, CostKind::Euclidean, gamma)?.delta;
        let omega = OmegaMatrix::dissim_quadratic(tau, tau).omega;

        // amortize timer resolution over enough calls per sample
        let inner = (200_000 / (tau * tau)).max(1);
        let mut custom = None;
        let per_batch = median_seconds(repeats, || {
            for _ in 0..inner {
                custom = Some(std::hint::black_box(dilate_delta_grad(&delta, &omega, alpha, gamma)?));
            }
            Ok(())
        })?;
        let custom_seconds = per_batch / inner as f64;
        let mut naive = None;
        let naive_seconds = median_seconds(repeats, || {
            naive = Some(std::hint::black_box(naive_delta_grad(&delta, &omega, alpha, gamma, 1e-6)?));
            Ok(())
        })?;
        let (custom, naive) = (custom.expect("timed").1, naive.expect("timed"));
        let scale = custom.amax().max(1e-300);
        rows.push(BenchRow {
            tau,
            repeats,
            custom_seconds,
            naive_seconds,
            speedup: naive_seconds / custom_seconds,
            max_gradient_gap: (&custom - &naive).amax() / scale,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backwards_agree() {
        let rows = bench_backward(&[6, 9], 1, 0.5, 0.1, 1).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.max_gradient_gap < 1e-5, "{r:?}");
            assert!(r.custom_seconds > 0.0 && r.naive_seconds > 0.0);
        }
    }

    #[test]
    fn invalid_requests() {
        assert!(matches!(bench_backward(&[20], 0, 0.5, 0.01, 0), Err(CliError::Usage(_))));
        assert!(matches!(bench_backward(&[], 1, 0.5, 0.01, 0), Err(CliError::Usage(_))));
    }
}
