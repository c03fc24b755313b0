//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records one forward evaluation; [`Tape::backward`] runs a
//! single reverse sweep. Losses with their own dynamic-programming backward
//! plug in through [`CustomOp`].
//!
//! Broadcasting is limited to [`Tape::add_scalar`], [`Tape::scale`] and
//! [`Tape::add_row_bias`].

mod tape;
mod tensor;

pub use tape::{register_custom_op, CustomOp, Gradients, OpHandle, SavedState, Tape, Var};
pub use tensor::Tensor;

/// Central finite-difference gradient of a scalar function.
pub fn numeric_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (up - down) / (2.0 * h);
    }
    out
}

/// `max_k |a_k − b_k| / max(|b_k|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}
