use crate::error::{dim_err, Error, Result};

/// A `dim`-channel trajectory of `len` time steps.
///
/// Values are stored time-major: the `dim` channels of step `t` live at
/// `values[t * dim..(t + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dim: usize,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return dim_err("time series dimension must be at least 1");
        }
        if values.is_empty() || values.len() % dim != 0 {
            return dim_err(format!(
                "{} values cannot form a non-empty series of dimension {dim}",
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series value at index {pos}")));
        }
        Ok(Self { dim, values })
    }

    /// Univariate series.
    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    /// Univariate constructor for literals known to be valid.
    ///
    /// Panics on empty or non-finite input.
    pub fn from_slice(values: &[f64]) -> Self {
        Self::univariate(values.to_vec()).expect("valid univariate series")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Channels of step `t` (0-based).
    pub fn point(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Single channel as a vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub(crate) fn check_same_dim(&self, other: &TimeSeries) -> Result<()> {
        if self.dim != other.dim {
            return dim_err(format!(
                "series dimensions differ ({} vs {})",
                self.dim, other.dim
            ));
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(&self, other: &TimeSeries) -> Result<()> {
        self.check_same_dim(other)?;
        if self.len() != other.len() {
            return dim_err(format!(
                "series lengths differ ({} vs {})",
                self.len(),
                other.len()
            ));
        }
        Ok(())
    }

    pub(crate) fn check_univariate(&self) -> Result<()> {
        if self.dim != 1 {
            return dim_err(format!("expected a univariate series, got dimension {}", self.dim));
        }
        Ok(())
    }
}
