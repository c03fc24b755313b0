use crate::error::{param_err, Result};
use crate::series::TimeSeries;

/// Piecewise-linear approximation: segment `k` joins samples
/// `breakpoints[k]` and `breakpoints[k+1]` (0-based) with slope `slopes[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSeries {
    pub breakpoints: Vec<usize>,
    pub slopes: Vec<f64>,
}

impl SegmentedSeries {
    /// Slope over each unit interval `[t, t+1]`, `len − 1` values.
    pub fn step_slopes(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (k, w) in self.breakpoints.windows(2).enumerate() {
            out.extend(std::iter::repeat_n(self.slopes[k], w[1] - w[0]));
        }
        out
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }
}

/// Swinging-door compression with corridor half-width `epsilon`.
pub fn swinging_door(series: &TimeSeries, epsilon: f64) -> Result<SegmentedSeries> {
    series.check_univariate()?;
    if !(epsilon > 0.0) {
        return param_err(format!("swinging door needs epsilon > 0, got {epsilon}"));
    }
    let x = series.values();
    let n = x.len();
    let mut breakpoints = vec![0];
    if n == 1 {
        return Ok(SegmentedSeries {
            breakpoints,
            slopes: vec![],
        });
    }
    let mut pivot = 0;
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut k = 1;
    while k < n {
        let dt = (k - pivot) as f64;
        let u = (x[k] + epsilon - x[pivot]) / dt;
        let l = (x[k] - epsilon - x[pivot]) / dt;
        let (nu, nl) = (upper.min(u), lower.max(l));
        if nl > nu && k - pivot > 1 {
            // corridor closed: archive the previous sample and restart from it
            pivot = k - 1;
            breakpoints.push(pivot);
            upper = f64::INFINITY;
            lower = f64::NEG_INFINITY;
            continue;
        }
        upper = nu;
        lower = nl;
        k += 1;
    }
    breakpoints.push(n - 1);
    let slopes = breakpoints
        .windows(2)
        .map(|w| (x[w[1]] - x[w[0]]) / (w[1] - w[0]) as f64)
        .collect();
    Ok(SegmentedSeries { breakpoints, slopes })
}

/// Default corridor: 5% of the series range (positive even for flat series).
pub fn default_epsilon(series: &TimeSeries) -> f64 {
    let x = series.values();
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0.05 * (hi - lo)).max(1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_series_is_one_segment() {
        let s = TimeSeries::univariate((0..10).map(|t| 0.5 * t as f64 - 1.0).collect()).unwrap();
        let seg = swinging_door(&s, 1e-3).unwrap();
        assert_eq!(seg.breakpoints, vec![0, 9]);
        assert!((seg.slopes[0] - 0.5).abs() < 1e-12);
        assert_eq!(seg.step_slopes().len(), 9);
    }

    #[test]
    fn step_breaks_at_the_jump() {
        let s = TimeSeries::from_slice(&[0., 0., 1., 1.]);
        let seg = swinging_door(&s, 0.01).unwrap();
        assert_eq!(seg.breakpoints, vec![0, 1, 2, 3]);
        assert_eq!(seg.slopes, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn wide_corridor_is_one_segment() {
        let s = TimeSeries::from_slice(&[0.2, -0.3, 0.9, 0.1, 0.4]);
        let seg = swinging_door(&s, 5.0).unwrap();
        assert_eq!(seg.segments(), 1);
        assert!(swinging_door(&s, 0.0).is_err());
    }
}
