//! Evaluation metrics for deterministic and ensemble forecasts.
//!
//! All metrics are loss-like: lower is better, including [`f1`].

mod changepoint;
mod swinging_door;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use changepoint::{detect_peaks, detect_step_changepoint, hausdorff, ChangePointSet, Detection};
pub use swinging_door::{default_epsilon, swinging_door, SegmentedSeries};

use crate::dtw::{cost_matrix, hard_dtw, tdi_hard, CostKind, OmegaMatrix};
use crate::error::{dim_err, Result};
use crate::losses::{dilate_value, DilateConfig};
use crate::series::TimeSeries;

/// Hard DTW with squared euclidean cost.
pub fn dtw_metric(y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<f64> {
    Ok(hard_dtw(&cost_matrix(y_pred, y_true, CostKind::Euclidean, 1.0)?)?.0)
}

/// Hard TDI of the euclidean optimal path with `Ω = (i−j)²/n²`.
pub fn tdi_metric(y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<f64> {
    let delta = cost_matrix(y_pred, y_true, CostKind::Euclidean, 1.0)?;
    tdi_hard(&delta, &OmegaMatrix::dissim_quadratic(y_pred.len(), y_true.len()))
}

pub fn mse(y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<f64> {
    y_pred.check_same_shape(y_true)?;
    let n = y_pred.values().len() as f64;
    Ok(y_pred
        .values()
        .iter()
        .zip(y_true.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn mae(y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<f64> {
    y_pred.check_same_shape(y_true)?;
    let n = y_pred.values().len() as f64;
    Ok(y_pred
        .values()
        .iter()
        .zip(y_true.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Warps `y_pred` onto the time axis of `y_true` along the hard DTW path.
///
/// Each prediction index moves to the rounded mean of the target indices it
/// is matched with; positions receiving several samples take their mean and
/// empty positions are linearly interpolated.
pub fn align_to_target(y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<TimeSeries> {
    let delta = cost_matrix(y_pred, y_true, CostKind::Euclidean, 1.0)?;
    let (_, path) = hard_dtw(&delta)?;
    let (n, m) = path.a.shape();
    let x = y_pred.values();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for i in 0..n {
        let matched: Vec<usize> = (0..m).filter(|&j| path.a[(i, j)] > 0.5).collect();
        let mean = matched.iter().sum::<usize>() as f64 / matched.len() as f64;
        let pos = round_half_up(mean).min(m - 1);
        sums[pos] += x[i];
        counts[pos] += 1;
    }
    let known: Vec<usize> = (0..m).filter(|&j| counts[j] > 0).collect();
    let mut out = vec![0.0; m];
    for &j in &known {
        out[j] = sums[j] / counts[j] as f64;
    }
    for j in 0..m {
        if counts[j] > 0 {
            continue;
        }
        let prev = known.iter().rev().find(|&&k| k < j).copied();
        let next = known.iter().find(|&&k| k > j).copied();
        out[j] = match (prev, next) {
            (Some(a), Some(b)) => {
                let w = (j - a) as f64 / (b - a) as f64;
                out[a] * (1.0 - w) + out[b] * w
            }
            (Some(a), None) => out[a],
            (None, Some(b)) => out[b],
            (None, None) => unreachable!("path visits every row"),
        };
    }
    TimeSeries::univariate(out)
}

/// Integrated absolute slope difference between the swinging-door
/// approximations of the target and the DTW-aligned prediction.
///
/// `epsilon` defaults to 5% of the target range.
pub fn ramp_score(y_pred: &TimeSeries, y_true: &TimeSeries, epsilon: Option<f64>) -> Result<f64> {
    y_pred.check_univariate()?;
    y_pred.check_same_shape(y_true)?;
    let eps = epsilon.unwrap_or_else(|| default_epsilon(y_true));
    let aligned = align_to_target(y_pred, y_true)?;
    let st = swinging_door(y_true, eps)?.step_slopes();
    let sp = swinging_door(&aligned, eps)?.step_slopes();
    Ok(st.iter().zip(&sp).map(|(a, b)| (a - b).abs()).sum())
}

/// Empirical CRPS of an ensemble, averaged over time steps and channels.
pub fn crps_ensemble(samples: &[TimeSeries], y_true: &TimeSeries) -> Result<f64> {
    if samples.is_empty() {
        return dim_err("CRPS needs at least one sample");
    }
    for s in samples {
        s.check_same_shape(y_true)?;
    }
    let n = samples.len() as f64;
    let y = y_true.values();
    let mut total = 0.0;
    for (t, &obs) in y.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|s| s.values()[t]).collect();
        let skill = xs.iter().map(|x| (x - obs).abs()).sum::<f64>() / n;
        let spread = xs
            .iter()
            .map(|a| xs.iter().map(|b| (a - b).abs()).sum::<f64>())
            .sum::<f64>()
            / (2.0 * n * n);
        total += skill - spread;
    }
    Ok(total / y.len() as f64)
}

/// Pairwise criterion for the set-to-set scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "loss")]
pub enum EvalLoss {
    HardDtw,
    HardTdi,
    Dilate(DilateConfig),
    Mse,
}

impl EvalLoss {
    pub fn eval(&self, y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<f64> {
        match self {
            EvalLoss::HardDtw => dtw_metric(y_pred, y_true),
            EvalLoss::HardTdi => tdi_metric(y_pred, y_true),
            EvalLoss::Dilate(cfg) => Ok(dilate_value(y_pred, y_true, cfg)?.0),
            EvalLoss::Mse => mse(y_pred, y_true),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EvalLoss::HardDtw => "dtw",
            EvalLoss::HardTdi => "tdi",
            EvalLoss::Dilate(_) => "dilate",
            EvalLoss::Mse => "mse",
        }
    }
}

/// `loss(pred_i, future_j)` for all pairs.
pub fn cross_loss(preds: &[TimeSeries], futures: &[TimeSeries], loss: &EvalLoss) -> Result<DMatrix<f64>> {
    if preds.is_empty() || futures.is_empty() {
        return dim_err("set scores need non-empty prediction and future sets");
    }
    let mut out = DMatrix::zeros(preds.len(), futures.len());
    for (i, p) in preds.iter().enumerate() {
        for (j, f) in futures.iter().enumerate() {
            out[(i, j)] = loss.eval(p, f)?;
        }
    }
    Ok(out)
}

/// Mean over predictions (rows) of the best matching future.
pub fn h_quality_from_matrix(cross: &DMatrix<f64>) -> f64 {
    cross.row_iter().map(|r| r.min()).sum::<f64>() / cross.nrows() as f64
}

/// Mean over futures (columns) of the best matching prediction.
pub fn h_diversity_from_matrix(cross: &DMatrix<f64>) -> f64 {
    cross.column_iter().map(|c| c.min()).sum::<f64>() / cross.ncols() as f64
}

pub fn h_quality(preds: &[TimeSeries], futures: &[TimeSeries], loss: &EvalLoss) -> Result<f64> {
    Ok(h_quality_from_matrix(&cross_loss(preds, futures, loss)?))
}

pub fn h_diversity(preds: &[TimeSeries], futures: &[TimeSeries], loss: &EvalLoss) -> Result<f64> {
    Ok(h_diversity_from_matrix(&cross_loss(preds, futures, loss)?))
}

/// Harmonic mean of the two set scores; 0 when both are 0.
pub fn f1(hq: f64, hd: f64) -> f64 {
    if hq + hd == 0.0 {
        0.0
    } else {
        2.0 * hq * hd / (hq + hd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_score_identity_and_constant_slope_gap() {
        let y = TimeSeries::from_slice(&[0.0, 0.2, 0.9, 1.0, 0.4, 0.3]);
        assert_eq!(ramp_score(&y, &y, None).unwrap(), 0.0);

        // a line vs a flat series fitted as one segment each: |c|·L
        let line = TimeSeries::univariate((0..6).map(|t| 0.1 * t as f64).collect()).unwrap();
        let flat = TimeSeries::from_slice(&[0.25; 6]);
        let aligned = align_to_target(&flat, &line).unwrap();
        assert_eq!(aligned.values(), flat.values());
        let r = ramp_score(&flat, &line, Some(1e-3)).unwrap();
        assert!((r - 0.1 * 5.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn ramp_score_step_vs_flat() {
        // target steps from 0 to 1 between samples 3 and 4; flat prediction at 0
        let step = TimeSeries::from_slice(&[0., 0., 0., 0., 1., 1., 1., 1.]);
        let flat = TimeSeries::from_slice(&[0.0; 8]);
        let r = ramp_score(&flat, &step, Some(0.01)).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn crps_examples() {
        let y = TimeSeries::from_slice(&[0.5, -1.0, 2.0]);
        assert_eq!(crps_ensemble(&[y.clone(), y.clone()], &y).unwrap(), 0.0);
        let p = TimeSeries::from_slice(&[1.0, 0.0, 1.0]);
        assert!((crps_ensemble(std::slice::from_ref(&p), &y).unwrap() - mae(&p, &y).unwrap()).abs() < 1e-15);
        let up = TimeSeries::univariate(y.values().iter().map(|v| v + 1.0).collect()).unwrap();
        let down = TimeSeries::univariate(y.values().iter().map(|v| v - 1.0).collect()).unwrap();
        assert!((crps_ensemble(&[up, down], &y).unwrap() - 0.5).abs() < 1e-15);
        assert!(crps_ensemble(&[], &y).is_err());
    }

    #[test]
    fn set_scores() {
        let a = TimeSeries::from_slice(&[0.0, 1.0, 0.5]);
        let b = TimeSeries::from_slice(&[1.0, 0.0, 0.2]);
        let set = vec![a.clone(), b.clone()];
        for loss in [EvalLoss::HardDtw, EvalLoss::Mse] {
            let hq = h_quality(&set, &set, &loss).unwrap();
            let hd = h_diversity(&set, &set, &loss).unwrap();
            assert_eq!((hq, hd, f1(hq, hd)), (0.0, 0.0, 0.0));
            let single = loss.eval(&a, &b).unwrap();
            assert_eq!(h_quality(&[a.clone()], &[b.clone()], &loss).unwrap(), single);
            assert_eq!(h_diversity(&[a.clone()], &[b.clone()], &loss).unwrap(), single);
        }
        let cross = DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 4.0, 0.0]);
        assert_eq!(h_quality_from_matrix(&cross), 0.0);
        assert_eq!(h_diversity_from_matrix(&cross), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert!((f1(1.0, 3.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn hard_metrics() {
        let y = TimeSeries::from_slice(&[0.0, 0.0, 1.0]);
        let z = TimeSeries::from_slice(&[0.0, 1.0, 1.0]);
        assert_eq!(dtw_metric(&y, &z).unwrap(), 0.0);
        assert!((tdi_metric(&y, &z).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
    }
}
