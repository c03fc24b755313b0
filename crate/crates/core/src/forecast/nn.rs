use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{dim_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// `x ↦ x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("shape matches data");
        let b = Tensor::matrix(1, fan_out, draw(fan_out)).expect("shape matches data");
        Self { w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.w.dims2().0
    }

    pub fn fan_out(&self) -> usize {
        self.w.dims2().1
    }
}

/// Fully connected network; the activation follows every hidden layer and,
/// if `activate_output`, the last one too.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub activate_output: bool,
}

impl Mlp {
    pub fn new(rng: &mut impl Rng, sizes: &[usize], activation: Activation, activate_output: bool) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::init(rng, w[0], w[1])).collect();
        Self {
            layers,
            activation,
            activate_output,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in()];
        s.extend(self.layers.iter().map(Dense::fan_out));
        s
    }

    /// Parameter count for layer widths `sizes`.
    pub fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    /// Places the weights on `tape`, as leaves if `trainable`, else constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.leaf(l.w.clone()), tape.leaf(l.b.clone()))
                } else {
                    (tape.constant(l.w.clone()), tape.constant(l.b.clone()))
                }
            })
            .collect();
        BoundMlp {
            layers,
            activation: self.activation,
            activate_output: self.activate_output,
        }
    }

    /// Tape-free forward pass for inference.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = bound.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// An [`Mlp`] whose weights live on a tape.
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
    activate_output: bool,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_row_bias(z, b)?;
            if i < last || self.activate_output {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }

    /// `[w₀, b₀, w₁, b₁, …]`, matching [`Mlp::params`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

pub fn flatten(params: &[&Tensor]) -> Vec<f64> {
    params.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Overwrites `params` in order from `data`, which must have exactly the
/// total parameter count.
pub fn unflatten_into(params: &mut [&mut Tensor], data: &[f64]) -> Result<()> {
    let total: usize = params.iter().map(|t| t.len()).sum();
    if total != data.len() {
        return dim_err(format!("{} weights supplied for {total} parameters", data.len()));
    }
    let mut offset = 0;
    for t in params.iter_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&data[offset..offset + n]);
        offset += n;
    }
    Ok(())
}
