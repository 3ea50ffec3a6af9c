//! Recording tape for reverse-mode differentiation.
//!
//! Every forward kernel appends one node holding its output buffer and the
//! information its backward rule needs. [`Tape::backward`] walks the nodes in
//! reverse recording order, so each rule runs exactly once and sees a fully
//! accumulated output gradient.

use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a buffer recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A value taking part in gradient accumulation. The gradient is allocated
/// lazily, the first time backward reaches the buffer.
#[derive(Debug, Clone)]
pub struct Buffer {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, row: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    MulConst { x: Var, mask: Vec<f64> },
    Sum { x: Var },
    Mean { x: Var },
    External { x: Var, grad: Vec<f64> },
    Relu { x: Var },
    Gelu { x: Var },
    Sigmoid { x: Var },
    Swish { x: Var },
    Glu { x: Var },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    LayerNorm(ops::norm::NormSaved),
    BatchNorm(ops::norm::NormSaved),
    BatchNormEval { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv1d { x: Var, w: Var, stride: usize, pad: usize },
    Depthwise { x: Var, w: Var, pad: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
    GatherRows { x: Var, index: Vec<usize> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b } | Add { a, b } | Mul { a, b } => vec![*a, *b],
            AddRow { x, row } => vec![*x, *row],
            Transpose { x }
            | Scale { x, .. }
            | MulConst { x, .. }
            | Sum { x }
            | Mean { x }
            | External { x, .. }
            | Relu { x }
            | Gelu { x }
            | Sigmoid { x }
            | Swish { x }
            | Glu { x }
            | Softmax { x }
            | LogSoftmax { x }
            | MaxPool { x, .. }
            | SliceCols { x, .. }
            | SliceRows { x, .. }
            | GatherRows { x, .. } => vec![*x],
            LayerNorm(s) | BatchNorm(s) => vec![s.x, s.gain, s.bias],
            BatchNormEval { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Conv1d { x, w, .. } | Depthwise { x, w, .. } => vec![*x, *w],
            ConcatCols { parts } | ConcatRows { parts } => parts.clone(),
        }
    }
}

struct Node {
    buf: Buffer,
    op: Op,
}

/// Ordered record of forward operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].buf.value
    }

    pub fn buffer(&self, v: Var) -> &Buffer {
        &self.nodes[v.0].buf
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].buf.grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].buf.requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].buf.value.shape()
    }

    pub(crate) fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].buf.value.data()
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            buf: Buffer {
                value,
                grad: None,
                requires_grad,
            },
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends the output of a kernel, rejecting non-finite results.
    pub(crate) fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.requires_grad(*v));
        Ok(self.push_node(value, op, requires_grad))
    }

    /// Propagates d(root)/d(·) to every buffer that requires a gradient.
    /// Gradients accumulate across calls; use [`Tape::zero_grads`] to reset.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalar(shape));
        }
        self.seed(root, Tensor::from_parts(shape, vec![1.0]));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].buf.requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].buf.grad.take() else {
                continue;
            };
            let contributions = self.backward_node(i, grad.data());
            self.nodes[i].buf.grad = Some(grad);
            for (input, g) in contributions {
                self.accumulate(input, g);
            }
        }
        // Every trainable leaf ends up with a gradient, even if unreachable.
        for node in &mut self.nodes {
            if node.buf.requires_grad && matches!(node.op, Op::Leaf) && node.buf.grad.is_none() {
                node.buf.grad = Some(Tensor::zeros(node.buf.value.shape()));
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.buf.grad = None;
        }
    }

    fn seed(&mut self, v: Var, g: Tensor) {
        self.nodes[v.0].buf.grad = Some(g);
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        let buf = &mut self.nodes[v.0].buf;
        if !buf.requires_grad {
            return;
        }
        match &mut buf.grad {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(g) {
                    *e += d;
                }
            }
            None => buf.grad = Some(Tensor::from_parts(buf.value.shape().to_vec(), g)),
        }
    }

    fn backward_node(&self, i: usize, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
        use ops::{activation as act, basic, conv, norm, shape};
        let out = &self.nodes[i].buf.value;
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } => basic::matmul_backward(self, *a, *b, grad),
            Op::Transpose { x } => basic::transpose_backward(self, *x, grad),
            Op::Add { a, b } => vec![(*a, grad.to_vec()), (*b, grad.to_vec())],
            Op::AddRow { x, row } => basic::add_row_backward(self, *x, *row, grad),
            Op::Mul { a, b } => basic::mul_backward(self, *a, *b, grad),
            Op::Scale { x, factor } => vec![(*x, grad.iter().map(|g| g * factor).collect())],
            Op::MulConst { x, mask } => {
                vec![(*x, grad.iter().zip(mask).map(|(g, m)| g * m).collect())]
            }
            Op::Sum { x } => vec![(*x, vec![grad[0]; self.value(*x).len()])],
            Op::Mean { x } => {
                let n = self.value(*x).len();
                vec![(*x, vec![grad[0] / n as f64; n])]
            }
            Op::External { x, grad: saved } => {
                vec![(*x, saved.iter().map(|s| s * grad[0]).collect())]
            }
            Op::Relu { x } => act::relu_backward(self, *x, grad),
            Op::Gelu { x } => act::gelu_backward(self, *x, grad),
            Op::Sigmoid { x } => act::sigmoid_backward(*x, out, grad),
            Op::Swish { x } => act::swish_backward(self, *x, grad),
            Op::Glu { x } => act::glu_backward(self, *x, grad),
            Op::Softmax { x } => act::softmax_backward(*x, out, grad),
            Op::LogSoftmax { x } => act::log_softmax_backward(*x, out, grad),
            Op::LayerNorm(s) => norm::layer_norm_backward(self, s, grad),
            Op::BatchNorm(s) => norm::batch_norm_backward(self, s, grad),
            Op::BatchNormEval {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => norm::batch_norm_eval_backward(self, *x, *gain, *bias, xhat, inv_std, grad),
            Op::Conv1d { x, w, stride, pad } => conv::conv1d_backward(self, *x, *w, *stride, *pad, out, grad),
            Op::Depthwise { x, w, pad } => conv::depthwise_backward(self, *x, *w, *pad, grad),
            Op::MaxPool { x, argmax } => conv::maxpool_backward(self, *x, argmax, grad),
            Op::SliceCols { x, start } => shape::slice_cols_backward(self, *x, *start, out, grad),
            Op::ConcatCols { parts } => shape::concat_cols_backward(self, parts, grad),
            Op::SliceRows { x, start } => shape::slice_rows_backward(self, *x, *start, grad),
            Op::ConcatRows { parts } => shape::concat_rows_backward(self, parts, grad),
            Op::GatherRows { x, index } => shape::gather_rows_backward(self, *x, index, grad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalar(_))));
    }

    #[test]
    fn unreachable_leaf_still_gets_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::zeros(&[3]));
        let y = tape.scale(x, 3.0).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 3.0);
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constants_never_receive_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(4.0));
        let y = tape.mul(x, c).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().item(), 4.0);
    }
}
