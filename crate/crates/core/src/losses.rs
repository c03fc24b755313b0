//! Training losses built on the DTW recursions.
//!
//! Every loss returns its value together with the gradient with respect to
//! the prediction, so the dynamic-programming tables are filled once per
//! evaluation. [`SeriesLossOp`] wraps them as a tape op over a batch.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{register_custom_op, CustomOp, OpHandle, SavedState, Tensor};
use crate::dtw::{self, check_gamma, cost_backward, cost_matrix, CostKind, OmegaMatrix, SoftDtw};
use crate::error::{dim_err, param_err, Error, Result};
use crate::series::TimeSeries;

/// Which temporal penalty matrix a loss builds for a given horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OmegaSpec {
    /// `(i−j)²/n²`.
    #[default]
    DissimQuadratic,
    /// 0 inside `|i−j| ≤ band`, a large penalty outside.
    SakoeChiba { band: usize },
    /// `(|i−j|/n)^power`, increasing in the lag.
    Weighted { power: f64 },
}

impl OmegaSpec {
    pub fn build(&self, n: usize, m: usize) -> OmegaMatrix {
        match *self {
            OmegaSpec::DissimQuadratic => OmegaMatrix::dissim_quadratic(n, m),
            OmegaSpec::SakoeChiba { band } => OmegaMatrix::sakoe_chiba(n, m, band),
            OmegaSpec::Weighted { power } => {
                OmegaMatrix::weighted(n, m, |g| (g as f64 / n as f64).powf(power))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilateConfig {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(default)]
    pub cost_kind: CostKind,
    #[serde(default)]
    pub omega: OmegaSpec,
}

impl Default for DilateConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 1e-2,
            cost_kind: CostKind::Euclidean,
            omega: OmegaSpec::DissimQuadratic,
        }
    }
}

impl DilateConfig {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let cfg = Self {
            alpha,
            gamma,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return param_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        check_gamma(self.gamma)
    }
}

/// Value, per-term breakdown and prediction gradient of one DILATE evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DilateOutput {
    pub value: f64,
    pub shape: f64,
    pub temporal: f64,
    /// Time-major, shaped like the prediction.
    pub grad: Vec<f64>,
}

/// `α·soft_dtw + (1−α)·tdi_soft` and its gradient w.r.t. `y_pred`.
pub fn dilate(y_pred: &TimeSeries, y_true: &TimeSeries, cfg: &DilateConfig) -> Result<DilateOutput> {
    cfg.validate()?;
    y_pred.check_same_shape(y_true)?;
    let delta = cost_matrix(y_pred, y_true, cfg.cost_kind, cfg.gamma)?;
    let (n, m) = delta.delta.shape();
    let table = SoftDtw::forward(&delta.delta, cfg.gamma)?;
    let shape = table.value();
    let a = table.alignment();
    let omega = cfg.omega.build(n, m);
    let temporal = a.component_mul(&omega.omega).sum();

    let grad_delta = if cfg.alpha < 1.0 {
        let h = table.hvp(&a, &omega.omega)?;
        a * cfg.alpha + h * (1.0 - cfg.alpha)
    } else {
        a
    };
    let grad = cost_backward(y_pred, y_true, cfg.cost_kind, cfg.gamma, &grad_delta)?.0;
    Ok(DilateOutput {
        value: cfg.alpha * shape + (1.0 - cfg.alpha) * temporal,
        shape,
        temporal,
        grad,
    })
}

/// DILATE value and its two terms, without the gradient pass.
pub fn dilate_value(y_pred: &TimeSeries, y_true: &TimeSeries, cfg: &DilateConfig) -> Result<(f64, f64, f64)> {
    cfg.validate()?;
    y_pred.check_same_shape(y_true)?;
    let delta = cost_matrix(y_pred, y_true, cfg.cost_kind, cfg.gamma)?;
    let (n, m) = delta.delta.shape();
    let table = SoftDtw::forward(&delta.delta, cfg.gamma)?;
    let shape = table.value();
    let temporal = table.alignment().component_mul(&cfg.omega.build(n, m).omega).sum();
    Ok((cfg.alpha * shape + (1.0 - cfg.alpha) * temporal, shape, temporal))
}

/// Soft-DTW alone, with gradient.
pub fn soft_dtw_loss(y_pred: &TimeSeries, y_true: &TimeSeries, kind: CostKind, gamma: f64) -> Result<(f64, Vec<f64>)> {
    y_pred.check_same_dim(y_true)?;
    let delta = cost_matrix(y_pred, y_true, kind, gamma)?;
    let table = SoftDtw::forward(&delta.delta, gamma)?;
    let a = table.alignment();
    let grad = cost_backward(y_pred, y_true, kind, gamma, &a)?.0;
    Ok((table.value(), grad))
}

/// Soft-DTW on the blended cost `αΔ + (1−α)Ω`, with gradient w.r.t. `y_pred`.
pub fn dilate_t_with_grad(y_pred: &TimeSeries, y_true: &TimeSeries, cfg: &DilateConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    y_pred.check_same_shape(y_true)?;
    let delta = cost_matrix(y_pred, y_true, cfg.cost_kind, cfg.gamma)?;
    let (n, m) = delta.delta.shape();
    let omega = cfg.omega.build(n, m);
    let blended: DMatrix<f64> = &delta.delta * cfg.alpha + &omega.omega * (1.0 - cfg.alpha);
    let table = SoftDtw::forward(&blended, cfg.gamma)?;
    let a = table.alignment() * cfg.alpha;
    let grad = cost_backward(y_pred, y_true, cfg.cost_kind, cfg.gamma, &a)?.0;
    Ok((table.value(), grad))
}

pub fn dilate_t(y_pred: &TimeSeries, y_true: &TimeSeries, cfg: &DilateConfig) -> Result<f64> {
    Ok(dilate_t_with_grad(y_pred, y_true, cfg)?.0)
}

/// `soft_dtw(y,z) − ½(soft_dtw(y,y) + soft_dtw(z,z))`.
pub fn dtw_div(y: &TimeSeries, z: &TimeSeries, cfg: &DilateConfig) -> Result<f64> {
    cfg.validate()?;
    let sdtw = |a: &TimeSeries, b: &TimeSeries| -> Result<f64> {
        dtw::soft_dtw(&cost_matrix(a, b, cfg.cost_kind, cfg.gamma)?, cfg.gamma)
    };
    Ok(sdtw(y, z)? - 0.5 * (sdtw(y, y)? + sdtw(z, z)?))
}

/// DILATE normalized the same way as [`dtw_div`].
pub fn dilate_div(y: &TimeSeries, z: &TimeSeries, cfg: &DilateConfig) -> Result<f64> {
    let d = |a: &TimeSeries, b: &TimeSeries| -> Result<f64> { Ok(dilate(a, b, cfg)?.value) };
    Ok(d(y, z)? - 0.5 * (d(y, y)? + d(z, z)?))
}

/// Mean squared error over all `d·τ` entries.
pub fn mse_loss(y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<(f64, Vec<f64>)> {
    y_pred.check_same_shape(y_true)?;
    let n = y_pred.values().len() as f64;
    let diff: Vec<f64> = y_pred
        .values()
        .iter()
        .zip(y_true.values())
        .map(|(a, b)| a - b)
        .collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((value, diff.into_iter().map(|d| 2.0 * d / n).collect()))
}

/// Per-sample training criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "loss")]
pub enum SeriesLoss {
    Mse,
    SoftDtw { gamma: f64 },
    Dilate(DilateConfig),
}

impl SeriesLoss {
    pub fn validate(&self) -> Result<()> {
        match self {
            SeriesLoss::Mse => Ok(()),
            SeriesLoss::SoftDtw { gamma } => check_gamma(*gamma),
            SeriesLoss::Dilate(cfg) => cfg.validate(),
        }
    }

    pub fn eval(&self, y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<(f64, Vec<f64>)> {
        match self {
            SeriesLoss::Mse => mse_loss(y_pred, y_true),
            SeriesLoss::SoftDtw { gamma } => soft_dtw_loss(y_pred, y_true, CostKind::Euclidean, *gamma),
            SeriesLoss::Dilate(cfg) => {
                let out = dilate(y_pred, y_true, cfg)?;
                Ok((out.value, out.grad))
            }
        }
    }

    pub fn value(&self, y_pred: &TimeSeries, y_true: &TimeSeries) -> Result<f64> {
        match self {
            SeriesLoss::Dilate(cfg) => Ok(dilate_value(y_pred, y_true, cfg)?.0),
            _ => Ok(self.eval(y_pred, y_true)?.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SeriesLoss::Mse => "mse",
            SeriesLoss::SoftDtw { .. } => "soft_dtw",
            SeriesLoss::Dilate(_) => "dilate",
        }
    }
}

/// Batch-mean of a [`SeriesLoss`] as a tape op.
///
/// Inputs: predictions `[B, τ·d]` and targets `[B, τ·d]` (rows time-major).
/// The target input receives a zero gradient.
pub struct SeriesLossOp {
    pub loss: SeriesLoss,
    pub dim: usize,
}

impl SeriesLossOp {
    pub fn register(loss: SeriesLoss, dim: usize) -> OpHandle {
        register_custom_op(SeriesLossOp { loss, dim })
    }
}

fn rows_as_series(t: &Tensor, dim: usize) -> Result<Vec<TimeSeries>> {
    let (r, _) = t.dims2();
    (0..r).map(|i| TimeSeries::new(dim, t.row(i).to_vec())).collect()
}

impl CustomOp for SeriesLossOp {
    fn name(&self) -> &str {
        self.loss.name()
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, SavedState)> {
        let [pred, target] = inputs else {
            return dim_err("series loss takes (prediction, target)");
        };
        pred.check_same_shape(target)?;
        let preds = rows_as_series(pred, self.dim)?;
        let targets = rows_as_series(target, self.dim)?;
        let per_sample: Vec<(f64, Vec<f64>)> = preds
            .par_iter()
            .zip(targets.par_iter())
            .map(|(p, t)| self.loss.eval(p, t))
            .collect::<Result<_>>()?;
        if let Some(i) = per_sample
            .iter()
            .position(|(v, g)| !v.is_finite() || g.iter().any(|x| !x.is_finite()))
        {
            let terms = match &self.loss {
                SeriesLoss::Dilate(cfg) => match dilate_value(&preds[i], &targets[i], cfg) {
                    Ok((_, shape, temporal)) => format!(" (shape term {shape}, temporal term {temporal})"),
                    Err(e) => format!(" ({e})"),
                },
                _ => String::new(),
            };
            return Err(Error::NonFinite(format!(
                "{} loss on sample {i} is {}{terms}",
                self.loss.name(),
                per_sample[i].0
            )));
        }
        let b = per_sample.len() as f64;
        let value = per_sample.iter().map(|(v, _)| v).sum::<f64>() / b;
        let mut grad = Vec::with_capacity(pred.len());
        for (_, g) in &per_sample {
            grad.extend(g.iter().map(|x| x / b));
        }
        let grad = Tensor::new(pred.shape().to_vec(), grad)?;
        Ok((Tensor::scalar(value), Box::new(grad)))
    }

    fn backward(&self, inputs: &[&Tensor], saved: &SavedState, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let grad = saved
            .downcast_ref::<Tensor>()
            .ok_or_else(|| Error::Contract("series loss saved state".into()))?;
        let u = upstream.item();
        Ok(vec![grad.map(|g| g * u), Tensor::zeros(inputs[1].shape())])
    }
}
