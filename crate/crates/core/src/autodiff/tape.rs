use std::any::Any;
use std::sync::Arc;

use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Opaque per-call state a custom op keeps between forward and backward.
pub type SavedState = Box<dyn Any + Send + Sync>;

/// An operation with a hand-written backward pass.
///
/// The tape treats it as a single node: its backward is called once with
/// the upstream gradient and must return one gradient per input, shaped
/// like that input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, SavedState)>;

    fn backward(&self, inputs: &[&Tensor], saved: &SavedState, upstream: &Tensor) -> Result<Vec<Tensor>>;
}

/// Shared handle to a registered custom op.
#[derive(Clone)]
pub struct OpHandle(Arc<dyn CustomOp>);

impl OpHandle {
    pub fn name(&self) -> &str {
        self.0.name()
    }
}

impl std::fmt::Debug for OpHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OpHandle({})", self.0.name())
    }
}

pub fn register_custom_op(op: impl CustomOp + 'static) -> OpHandle {
    OpHandle(Arc::new(op))
}

/// Node reference on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    /// Columns from `start` of a 2-D tensor; the width is the output's.
    SliceCols(Var, usize),
    /// Rows from `start` of a 2-D tensor.
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    RepeatRows(Var, usize),
    Custom {
        op: OpHandle,
        inputs: Vec<Var>,
        saved: SavedState,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records one forward evaluation for a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node; `None` for nodes the loss does not depend on
    /// through differentiable paths (constants, unrelated leaves).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zero-filled when the loss does not reach it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn expect_rank2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return dim_err(format!("{what} needs a 2-D tensor, got {:?}", t.shape()));
    }
    Ok(t.dims2())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// Non-differentiable input (data, frozen noise, frozen weights).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x[r, c] + bias[c]` for a 2-D `x` and a length-`c` (or `1×c`) bias.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = expect_rank2(self.value(x), "add_row_bias")?;
        let b = self.value(bias);
        if b.len() != c || b.dims2().0 != 1 {
            return dim_err(format!(
                "bias {:?} does not broadcast over {:?}",
                b.shape(),
                self.value(x).shape()
            ));
        }
        let xv = self.value(x);
        let mut data = xv.data().to_vec();
        for i in 0..r {
            for (o, bb) in data[i * c..(i + 1) * c].iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        let out = Tensor::matrix(r, c, data)?;
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    /// Natural log; non-positive inputs give NaN/-inf and are caught by the
    /// finiteness check at backward time.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = expect_rank2(self.value(a), "slice_cols")?;
        if start >= end || end > c {
            return dim_err(format!("column slice {start}..{end} of width {c}"));
        }
        let t = self.value(a);
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = Tensor::matrix(r, w, data)?;
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = expect_rank2(self.value(a), "slice_rows")?;
        if start >= end || end > r {
            return dim_err(format!("row slice {start}..{end} of height {r}"));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let out = Tensor::matrix(end - start, c, data)?;
        Ok(self.push(out, Op::SliceRows(a, start), &[a]))
    }

    /// Side-by-side concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat of zero tensors");
        }
        let r = expect_rank2(self.value(parts[0]), "concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = expect_rank2(self.value(p), "concat_cols")?;
            if pr != r {
                return dim_err(format!("concat_cols row counts {r} and {pr}"));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(r, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat of zero tensors");
        }
        let c = expect_rank2(self.value(parts[0]), "concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = expect_rank2(self.value(p), "concat_rows")?;
            if pc != c {
                return dim_err(format!("concat_rows column counts {c} and {pc}"));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, c, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Repeats every row `times` times consecutively: `[r, c] → [r·times, c]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let (r, c) = expect_rank2(self.value(a), "repeat_rows")?;
        if times == 0 {
            return dim_err("repeat_rows by zero");
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(r * c * times);
        for i in 0..r {
            for _ in 0..times {
                data.extend_from_slice(t.row(i));
            }
        }
        let out = Tensor::matrix(r * times, c, data)?;
        Ok(self.push(out, Op::RepeatRows(a, times), &[a]))
    }

    pub fn custom(&mut self, op: &OpHandle, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let (out, saved) = op.0.forward(&values)?;
        Ok(self.push(
            out,
            Op::Custom {
                op: op.clone(),
                inputs: inputs.to_vec(),
                saved,
            },
            inputs,
        ))
    }

    /// Reverse sweep from a scalar loss with unit seed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse sweep seeded with `seed·∂loss/∂loss`.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        lv.check_finite("loss")?;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), seed));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (parent, pg) in self.node_backward(node, &g)? {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |x, y| x * y)?),
                (*b, g.zip_map(val(*a), |x, y| x * y)?),
            ],
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose())?;
                let gb = val(*a).transpose().matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRowBias(x, bias) => {
                let (r, c) = g.dims2();
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for (acc, v) in gb.iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                let gb = Tensor::new(val(*bias).shape().to_vec(), gb)?;
                vec![(*x, g.clone()), (*bias, gb)]
            }
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Scale(a, c) => vec![(*a, g.map(|x| x * c))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let t = val(*a);
                vec![(*a, Tensor::full(t.shape(), g.item() / t.len() as f64))]
            }
            Op::Exp(a) => vec![(*a, g.zip_map(&node.value, |x, y| x * y)?)],
            Op::Log(a) => vec![(*a, g.zip_map(val(*a), |x, y| x / y)?)],
            Op::Tanh(a) => vec![(*a, g.zip_map(&node.value, |x, t| x * (1.0 - t * t))?)],
            Op::Relu(a) => vec![(
                *a,
                g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 })?,
            )],
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let (r, c) = src.dims2();
                let w = g.dims2().1;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    out[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                vec![(*a, Tensor::matrix(r, c, out)?)]
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let (r, c) = src.dims2();
                let mut out = vec![0.0; r * c];
                out[start * c..start * c + g.len()].copy_from_slice(g.data());
                vec![(*a, Tensor::matrix(r, c, out)?)]
            }
            Op::ConcatCols(parts) => {
                let r = g.dims2().0;
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let pc = val(p).dims2().1;
                    let mut out = Vec::with_capacity(r * pc);
                    for i in 0..r {
                        out.extend_from_slice(&g.row(i)[offset..offset + pc]);
                    }
                    res.push((p, Tensor::matrix(r, pc, out)?));
                    offset += pc;
                }
                res
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = val(p).len();
                    let part = Tensor::new(val(p).shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                    res.push((p, part));
                    offset += n;
                }
                res
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshaped(val(*a).shape().to_vec()))],
            Op::RepeatRows(a, times) => {
                let (r, c) = val(*a).dims2();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for k in 0..*times {
                        for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(g.row(i * times + k)) {
                            *o += v;
                        }
                    }
                }
                vec![(*a, Tensor::matrix(r, c, out)?)]
            }
            Op::Custom { op, inputs, saved } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.0.backward(&values, saved, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op `{}` returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (gi, vi) in gs.iter().zip(&values) {
                    if gi.shape() != vi.shape() {
                        return Err(Error::Contract(format!(
                            "custom op `{}` gradient shape {:?} for input {:?}",
                            op.name(),
                            gi.shape(),
                            vi.shape()
                        )));
                    }
                }
                inputs.iter().copied().zip(gs).collect()
            }
        })
    }
}
