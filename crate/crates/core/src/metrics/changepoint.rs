use crate::error::{dim_err, Result};
use crate::series::TimeSeries;

/// Sorted, strictly increasing 1-based time indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChangePointSet {
    indices: Vec<usize>,
}

impl ChangePointSet {
    /// Sorts and deduplicates; index 0 is rejected since indices are 1-based.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.contains(&0) {
            return dim_err("change-point indices are 1-based");
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }
}

/// Change-point set whose detection may have been ill-posed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    pub points: ChangePointSet,
    /// Set when the input had no signal to locate (e.g. a constant series).
    pub degenerate: bool,
}

fn directed(from: &[usize], to: &[usize]) -> usize {
    from.iter()
        .map(|&a| to.iter().map(|&b| a.abs_diff(b)).min().unwrap_or(usize::MAX))
        .max()
        .unwrap_or(0)
}

/// Symmetric Hausdorff distance between two change-point sets.
///
/// If either set is empty the worst case `horizon` is returned.
pub fn hausdorff(t_true: &ChangePointSet, t_pred: &ChangePointSet, horizon: usize) -> f64 {
    if t_true.is_empty() || t_pred.is_empty() {
        log::debug!("hausdorff on an empty change-point set; scoring the horizon {horizon}");
        return horizon as f64;
    }
    directed(&t_pred.indices, &t_true.indices).max(directed(&t_true.indices, &t_pred.indices)) as f64
}

/// Best single split of a piecewise-constant two-segment fit.
///
/// Returns the 1-based index of the first sample of the second segment.
pub fn detect_step_changepoint(series: &TimeSeries) -> Result<Detection> {
    series.check_univariate()?;
    let x = series.values();
    let n = x.len();
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n < 2 || hi == lo {
        return Ok(Detection {
            points: ChangePointSet::new(vec![(n / 2).max(1)])?,
            degenerate: true,
        });
    }
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, &v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a]) - s * s / len
    };
    let mut best = (sse(0, 1) + sse(1, n), 1);
    // second segment starts at 0-based k; earliest split wins near-ties
    for k in 2..n {
        let cost = sse(0, k) + sse(k, n);
        if cost < best.0 - 1e-12 * best.0.abs().max(1.0) {
            best = (cost, k);
        }
    }
    Ok(Detection {
        points: ChangePointSet::new(vec![best.1 + 1])?,
        degenerate: false,
    })
}

/// Local maxima above `threshold`, keeping the higher of any two peaks
/// closer than `min_distance`.
pub fn detect_peaks(series: &TimeSeries, threshold: f64, min_distance: usize) -> Result<ChangePointSet> {
    series.check_univariate()?;
    let x = series.values();
    let mut candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&t| x[t] - x[t - 1] > 0.0 && x[t + 1] - x[t] <= 0.0 && x[t] > threshold)
        .collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance) {
            kept.push(c);
        }
    }
    ChangePointSet::new(kept.into_iter().map(|t| t + 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> ChangePointSet {
        ChangePointSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&set(&[5]), &set(&[7]), 20), 2.0);
        assert_eq!(hausdorff(&set(&[3, 10]), &set(&[3, 10]), 20), 0.0);
        assert_eq!(hausdorff(&set(&[3, 10]), &set(&[4, 9]), 20), 1.0);
        assert_eq!(hausdorff(&set(&[3]), &set(&[]), 20), 20.0);
    }

    #[test]
    fn step_detection() {
        let d = detect_step_changepoint(&TimeSeries::from_slice(&[0., 0., 0., 1., 1.])).unwrap();
        assert_eq!(d.points.indices(), &[4]);
        assert!(!d.degenerate);
        let d = detect_step_changepoint(&TimeSeries::from_slice(&[1., 1., 0., 0.])).unwrap();
        assert_eq!(d.points.indices(), &[3]);
        let d = detect_step_changepoint(&TimeSeries::from_slice(&[2.0; 6])).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.points.indices(), &[3]);
    }

    #[test]
    fn peaks() {
        let mono = TimeSeries::from_slice(&[0., 1., 2., 3., 4.]);
        assert!(detect_peaks(&mono, -1.0, 1).unwrap().is_empty());

        let tri = TimeSeries::from_slice(&[0., 1., 2., 3., 4., 3., 2., 1.]);
        assert_eq!(detect_peaks(&tri, 3.5, 1).unwrap().indices(), &[5]);

        let two = TimeSeries::from_slice(&[0., 2., 0., 0., 3., 0., 0.]);
        assert_eq!(detect_peaks(&two, 0.5, 5).unwrap().indices(), &[5]);
        assert_eq!(detect_peaks(&two, 0.5, 2).unwrap().indices(), &[2, 5]);
    }
}
