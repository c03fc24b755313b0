use dilate::data::DatasetSplit;
use dilate::dtw::CostKind;
use dilate::forecast::Model;
use dilate::losses::{dilate_value, soft_dtw_loss, DilateConfig};
use dilate::metrics::{
    crps_ensemble, cross_loss, detect_step_changepoint, dtw_metric, f1, h_diversity_from_matrix, h_quality_from_matrix,
    hausdorff, mse, ramp_score, tdi_metric, EvalLoss,
};
use dilate::TimeSeries;
use rayon::prelude::*;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Mse,
    Dtw,
    Tdi,
    Ramp,
    Hausdorff,
    Dilate,
    SoftDtw,
    Crps,
    HQuality,
    HDiversity,
    F1,
}

pub const POINT_DEFAULTS: [Metric; 5] = [Metric::Mse, Metric::Dtw, Metric::Tdi, Metric::Ramp, Metric::Hausdorff];
pub const SET_DEFAULTS: [Metric; 4] = [Metric::Crps, Metric::HQuality, Metric::HDiversity, Metric::F1];

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::Mse,
        Metric::Dtw,
        Metric::Tdi,
        Metric::Ramp,
        Metric::Hausdorff,
        Metric::Dilate,
        Metric::SoftDtw,
        Metric::Crps,
        Metric::HQuality,
        Metric::HDiversity,
        Metric::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Dtw => "dtw",
            Metric::Tdi => "tdi",
            Metric::Ramp => "ramp",
            Metric::Hausdorff => "hausdorff",
            Metric::Dilate => "dilate",
            Metric::SoftDtw => "soft_dtw",
            Metric::Crps => "crps",
            Metric::HQuality => "h_quality",
            Metric::HDiversity => "h_diversity",
            Metric::F1 => "f1",
        }
    }

    /// Whether the metric scores one point forecast per (input, future) pair.
    pub fn is_point(self) -> bool {
        !matches!(self, Metric::Crps | Metric::HQuality | Metric::HDiversity | Metric::F1)
    }
}

impl std::str::FromStr for Metric {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
                CliError::usage(format!("unknown metric {s:?} (one of {})", names.join(", ")))
            })
    }
}

pub fn parse_metrics(names: &[String]) -> Result<Vec<Metric>> {
    names.iter().map(|n| n.parse()).collect()
}

/// Scores one point forecast against one future.
pub fn point_metric(metric: Metric, pred: &TimeSeries, target: &TimeSeries, dilate: &DilateConfig) -> Result<f64> {
    Ok(match metric {
        Metric::Mse => mse(pred, target)?,
        Metric::Dtw => dtw_metric(pred, target)?,
        Metric::Tdi => tdi_metric(pred, target)?,
        Metric::Ramp => ramp_score(pred, target, None)?,
        Metric::Hausdorff => {
            let t = detect_step_changepoint(target)?;
            let p = detect_step_changepoint(pred)?;
            hausdorff(&t.points, &p.points, target.len())
        }
        Metric::Dilate => dilate_value(pred, target, dilate)?.0,
        Metric::SoftDtw => soft_dtw_loss(pred, target, CostKind::Euclidean, dilate.gamma)?.0,
        m => return Err(CliError::usage(format!("{} is a set metric", m.name()))),
    })
}

fn point_forecasts(model: &Model, split: &DatasetSplit) -> Result<Vec<Vec<TimeSeries>>> {
    split
        .samples
        .par_iter()
        .map(|s| match model {
            Model::Mlp(m) => Ok(vec![m.predict(&s.input)?; s.futures.len()]),
            Model::Oracle => Ok(s.futures.clone()),
            Model::Stripe(_) => Err(CliError::usage(
                "point metrics need a deterministic checkpoint; latent-code models support crps, h_quality, h_diversity, f1",
            )),
        })
        .collect()
}

/// Prediction set per input: the single forecast of a point model, the
/// `N_s × N_t` proposals of a latent-code model, the futures themselves for the oracle.
pub fn prediction_sets(model: &Model, split: &DatasetSplit) -> Result<Vec<Vec<TimeSeries>>> {
    split
        .samples
        .par_iter()
        .map(|s| -> Result<Vec<TimeSeries>> {
            Ok(match model {
                Model::Mlp(m) => vec![m.predict(&s.input)?],
                Model::Stripe(m) => m.sample_futures(&s.input)?,
                Model::Oracle => s.futures.clone(),
            })
        })
        .collect()
}

/// Split means of set metrics over given prediction sets.
pub fn set_metrics(
    sets: &[Vec<TimeSeries>],
    split: &DatasetSplit,
    metrics: &[Metric],
    dilate: &DilateConfig,
) -> Result<Vec<(Metric, f64)>> {
    if sets.len() != split.samples.len() {
        return Err(CliError::usage("one prediction set per input is required"));
    }
    let loss = EvalLoss::Dilate(*dilate);
    let need_h = metrics.iter().any(|m| matches!(m, Metric::HQuality | Metric::HDiversity | Metric::F1));
    let need_crps = metrics.contains(&Metric::Crps);
    let per: Vec<(f64, f64, f64)> = sets
        .par_iter()
        .zip(&split.samples)
        .map(|(set, s)| -> Result<(f64, f64, f64)> {
            let (mut hq, mut hd, mut crps) = (0.0, 0.0, 0.0);
            if need_h {
                let c = cross_loss(set, &s.futures, &loss)?;
                hq = h_quality_from_matrix(&c);
                hd = h_diversity_from_matrix(&c);
            }
            if need_crps {
                for f in &s.futures {
                    crps += crps_ensemble(set, f)?;
                }
                crps /= s.futures.len() as f64;
            }
            Ok((hq, hd, crps))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let hq = per.iter().map(|p| p.0).sum::<f64>() / n;
    let hd = per.iter().map(|p| p.1).sum::<f64>() / n;
    let crps = per.iter().map(|p| p.2).sum::<f64>() / n;
    metrics
        .iter()
        .map(|&m| {
            Ok((
                m,
                match m {
                    Metric::HQuality => hq,
                    Metric::HDiversity => hd,
                    Metric::F1 => f1(hq, hd),
                    Metric::Crps => crps,
                    m => return Err(CliError::usage(format!("{} is a point metric", m.name()))),
                },
            ))
        })
        .collect()
}

/// Split means of the requested metrics, in request order.
pub fn evaluate(model: &Model, split: &DatasetSplit, metrics: &[Metric], dilate: &DilateConfig) -> Result<Vec<(Metric, f64)>> {
    let point: Vec<Metric> = metrics.iter().copied().filter(|m| m.is_point()).collect();
    let set: Vec<Metric> = metrics.iter().copied().filter(|m| !m.is_point()).collect();
    let mut values = Vec::with_capacity(metrics.len());
    if !point.is_empty() {
        let preds = point_forecasts(model, split)?;
        let per_pair: Vec<Vec<f64>> = preds
            .par_iter()
            .zip(&split.samples)
            .flat_map_iter(|(ps, s)| ps.iter().zip(&s.futures).collect::<Vec<_>>())
            .map(|(p, f)| point.iter().map(|&m| point_metric(m, p, f, dilate)).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()?;
        let n = per_pair.len().max(1) as f64;
        for (k, &m) in point.iter().enumerate() {
            values.push((m, per_pair.iter().map(|v| v[k]).sum::<f64>() / n));
        }
    }
    if !set.is_empty() {
        let sets = prediction_sets(model, split)?;
        let mut scored = set_metrics(&sets, split, &set, dilate)?;
        if matches!(model, Model::Oracle) {
            // the oracle's ensemble for a pair is that pair's future alone
            let mut total = 0.0;
            for (_, f) in split.pairs() {
                total += crps_ensemble(std::slice::from_ref(f), f)?;
            }
            for (m, v) in scored.iter_mut() {
                if *m == Metric::Crps {
                    *v = total / split.n_pairs().max(1) as f64;
                }
            }
        }
        values.extend(scored);
    }
    values.sort_by_key(|(m, _)| metrics.iter().position(|x| x == m));
    Ok(values)
}
