//! Differentiable shape and temporal criteria for time series forecasting.
//!
//! * [`dtw`]: cost matrices, hard/soft DTW, soft alignments, temporal
//!   distortion indices and Hessian-vector products, all `O(nm)`.
//! * [`losses`]: DILATE and its variants, with analytic gradients.
//! * [`kernels`]: PSD shape/time kernels and the DPP diversity loss.
//! * [`metrics`]: evaluation metrics for deterministic and ensemble forecasts.
//! * [`data`]: synthetic benchmarks and a windowed CSV loader.
//! * [`forecast`]: MLP and latent-code forecasters with their training loops.
//! * [`autodiff`]: the small reverse-mode engine the trainers run on.

pub mod autodiff;
pub mod data;
pub mod dtw;
pub mod forecast;
pub mod kernels;
pub mod losses;
pub mod metrics;
mod error;
pub mod series;

pub use error::{Error, Result};
pub use series::TimeSeries;
