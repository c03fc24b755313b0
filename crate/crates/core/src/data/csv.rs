use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSplit, Sample, SplitKind};
use crate::error::{param_err, Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    Zscore,
    Minmax,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "zscore" => Ok(Self::Zscore),
            "minmax" => Ok(Self::Minmax),
            other => param_err(format!("unknown normalization {other:?} (none|zscore|minmax)")),
        }
    }
}

/// `x ↦ (x − shift) / scale`, fitted on the training windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kind: Normalization,
    pub shift: f64,
    pub scale: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            kind: Normalization::None,
            shift: 0.0,
            scale: 1.0,
        }
    }

    pub fn fit(kind: Normalization, values: &[f64]) -> Self {
        let (shift, scale) = match kind {
            Normalization::None => (0.0, 1.0),
            Normalization::Zscore => {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
            Normalization::Minmax => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
        };
        if scale > 0.0 {
            Self { kind, shift, scale }
        } else {
            log::warn!("{kind:?} normalization of a constant training range; using unit scale");
            Self { kind, shift, scale: 1.0 }
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * self.scale + self.shift
    }
}

/// Parses a one-column numeric file. Values may be separated by commas or
/// newlines; the first line is treated as a header if it does not parse.
pub fn parse_csv_series(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut parsed = Vec::new();
        let mut failed = None;
        for token in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                Ok(_) => {
                    failed = Some(format!("non-finite value {token:?}"));
                    break;
                }
                Err(_) => {
                    failed = Some(format!("not a number: {token:?}"));
                    break;
                }
            }
        }
        match failed {
            Some(_) if line_no == 1 => continue,
            Some(msg) => return Err(Error::Parse { line: line_no, msg }),
            None => out.extend(parsed),
        }
    }
    Ok(out)
}

/// Train/valid/test windows of one univariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub data: Dataset,
    pub normalizer: Normalizer,
    /// Windows before splitting and purging.
    pub n_windows: usize,
    /// Start rows (0-based) of the windows kept in each split.
    pub starts: [Vec<usize>; 3],
}

/// Slides windows of `context + horizon` rows and splits them in time order,
/// 60/20/20. Windows of a later split that overlap rows of an earlier split
/// are dropped so no row appears in two splits.
pub fn window_series(
    values: &[f64],
    context: usize,
    horizon: usize,
    stride: usize,
    normalization: Normalization,
    name: &str,
) -> Result<WindowedDataset> {
    if context == 0 || horizon == 0 || stride == 0 {
        return param_err("context, horizon and stride must be positive");
    }
    let width = context + horizon;
    if values.len() < width {
        return param_err(format!(
            "series has {} rows, fewer than one window of {width}",
            values.len()
        ));
    }
    let all: Vec<usize> = (0..=values.len() - width).step_by(stride).collect();
    let n = all.len();
    let n_train = n * 60 / 100;
    let n_valid = n * 20 / 100;
    if n_train == 0 || n_valid == 0 || n - n_train - n_valid == 0 {
        return param_err(format!("{n} windows are too few for a 60/20/20 split"));
    }
    let mut starts: [Vec<usize>; 3] = [
        all[..n_train].to_vec(),
        all[n_train..n_train + n_valid].to_vec(),
        all[n_train + n_valid..].to_vec(),
    ];
    for k in 1..3 {
        let prev_end = starts[..k]
            .iter()
            .rev()
            .find_map(|s| s.last())
            .map(|&s| s + width);
        if let Some(end) = prev_end {
            starts[k].retain(|&s| s >= end);
        }
        if starts[k].is_empty() {
            return param_err(format!(
                "no {} windows remain after removing overlap; use a longer series or larger stride",
                [SplitKind::Train, SplitKind::Valid, SplitKind::Test][k].name()
            ));
        }
    }
    let train_values: Vec<f64> = starts[0]
        .iter()
        .flat_map(|&s| values[s..s + width].iter().copied())
        .collect();
    let normalizer = Normalizer::fit(normalization, &train_values);
    let make = |split: SplitKind, st: &[usize]| -> Result<DatasetSplit> {
        let samples = st
            .iter()
            .map(|&s| {
                let w: Vec<f64> = values[s..s + width].iter().map(|&v| normalizer.apply(v)).collect();
                Ok(Sample {
                    input: TimeSeries::univariate(w[..context].to_vec())?,
                    futures: vec![TimeSeries::univariate(w[context..].to_vec())?],
                    meta: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetSplit::new(name, split, 0, context, horizon, samples))
    };
    let data = Dataset {
        train: make(SplitKind::Train, &starts[0])?,
        valid: make(SplitKind::Valid, &starts[1])?,
        test: make(SplitKind::Test, &starts[2])?,
    };
    Ok(WindowedDataset {
        data,
        normalizer,
        n_windows: n,
        starts,
    })
}

pub fn load_csv_windows(
    path: impl AsRef<Path>,
    context: usize,
    horizon: usize,
    stride: usize,
    normalization: Normalization,
) -> Result<WindowedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values = parse_csv_series(&text)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    window_series(&values, context, horizon, stride, normalization, &name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.05).collect()
    }

    #[test]
    fn parse_header_commas_and_errors() {
        assert_eq!(parse_csv_series("value\n1\n2.5\n\n-3e1\n").unwrap(), vec![1.0, 2.5, -30.0]);
        assert_eq!(parse_csv_series("1,2,3\n4,\n").unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        match parse_csv_series("v\n1\n2\nabc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_csv_series("1\nNaN\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn window_count_and_disjoint_splits() {
        let w = window_series(&ramp(100), 8, 2, 1, Normalization::None, "r").unwrap();
        assert_eq!(w.n_windows, 91);
        for k in 1..3 {
            let prev_end = w.starts[k - 1].last().unwrap() + 10;
            assert!(w.starts[k][0] >= prev_end);
        }
        assert_eq!(w.data.train.samples.len(), 54);
        assert!(window_series(&ramp(9), 8, 2, 1, Normalization::None, "r").is_err());
    }

    #[test]
    fn zscore_and_minmax_fit_on_train() {
        let v = ramp(200);
        let z = window_series(&v, 8, 2, 1, Normalization::Zscore, "r").unwrap();
        let pooled: Vec<f64> = z
            .data
            .train
            .samples
            .iter()
            .flat_map(|s| s.input.values().iter().chain(s.futures[0].values()).copied())
            .collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let std = (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10 && (std - 1.0).abs() < 1e-10);

        let m = window_series(&v, 8, 2, 1, Normalization::Minmax, "r").unwrap();
        let train: Vec<f64> = m
            .data
            .train
            .samples
            .iter()
            .flat_map(|s| s.input.values().iter().chain(s.futures[0].values()).copied())
            .collect();
        let lo = train.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let test_hi = m.data.test.samples.iter().flat_map(|s| s.input.values().iter().copied()).fold(f64::MIN, f64::max);
        assert!(test_hi > 1.0);
        let x = 2.345;
        assert!((m.normalizer.invert(m.normalizer.apply(x)) - x).abs() < 1e-12);
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("series.csv");
        let text: String = std::iter::once("y".to_string())
            .chain(ramp(100).iter().map(|v| v.to_string()))
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(&p, text).unwrap();
        let w = load_csv_windows(&p, 8, 2, 1, Normalization::None).unwrap();
        assert_eq!(w.n_windows, 91);
        assert_eq!(w.data.train.name, "series");
        assert!(matches!(
            load_csv_windows(dir.path().join("missing.csv"), 8, 2, 1, Normalization::None),
            Err(Error::Io { .. })
        ));
    }
}
