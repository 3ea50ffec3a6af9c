use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{dim_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v * FRAC_1_SQRT_2))
}

fn gelu_grad(v: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(v * FRAC_1_SQRT_2));
    let pdf = (-0.5 * v * v).exp() / (2.0 * PI).sqrt();
    cdf + v * pdf
}

impl Tape {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu { x })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu);
        self.push("gelu", out, Op::Gelu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid { x })
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push("swish", out, Op::Swish { x })
    }

    /// Gated linear unit over the last axis: `first_half ⊙ sigmoid(second_half)`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let c2 = v.cols();
        if !c2.is_multiple_of(2) {
            return Err(dim_err("glu", format!("odd channel count {c2}")));
        }
        let c = c2 / 2;
        let mut data = Vec::with_capacity(v.len() / 2);
        for row in v.data().chunks(c2) {
            let (a, b) = row.split_at(c);
            data.extend(a.iter().zip(b).map(|(a, b)| a * sigmoid(*b)));
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = c;
        let out = Tensor::from_parts(shape, data);
        self.push("glu", out, Op::Glu { x })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let c = v.cols();
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|r| (r - max).exp()));
            let z: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|e| *e /= z);
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("softmax_rows", out, Op::Softmax { x })
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let c = v.cols();
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|r| (r - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|r| r - lse));
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("log_softmax_rows", out, Op::LogSoftmax { x })
    }
}

pub(crate) fn relu_backward(tape: &Tape, x: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let g = grad
        .iter()
        .zip(tape.data(x))
        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
        .collect();
    vec![(x, g)]
}

pub(crate) fn gelu_backward(tape: &Tape, x: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let g = grad.iter().zip(tape.data(x)).map(|(g, v)| g * gelu_grad(*v)).collect();
    vec![(x, g)]
}

pub(crate) fn sigmoid_backward(x: Var, out: &Tensor, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let g = grad.iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
    vec![(x, g)]
}

pub(crate) fn swish_backward(tape: &Tape, x: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let g = grad
        .iter()
        .zip(tape.data(x))
        .map(|(g, v)| {
            let s = sigmoid(*v);
            g * (s + v * s * (1.0 - s))
        })
        .collect();
    vec![(x, g)]
}

pub(crate) fn glu_backward(tape: &Tape, x: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let v = tape.value(x);
    let c2 = v.cols();
    let c = c2 / 2;
    let mut gx = vec![0.0; v.len()];
    for (r, (row, g)) in v.data().chunks(c2).zip(grad.chunks(c)).enumerate() {
        for j in 0..c {
            let (a, b) = (row[j], row[c + j]);
            let s = sigmoid(b);
            gx[r * c2 + j] = g[j] * s;
            gx[r * c2 + c + j] = g[j] * a * s * (1.0 - s);
        }
    }
    vec![(x, gx)]
}

pub(crate) fn softmax_backward(x: Var, out: &Tensor, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let c = out.cols();
    let mut gx = Vec::with_capacity(out.len());
    for (y, g) in out.data().chunks(c).zip(grad.chunks(c)) {
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        gx.extend(y.iter().zip(g).map(|(y, g)| y * (g - dot)));
    }
    vec![(x, gx)]
}

pub(crate) fn log_softmax_backward(x: Var, out: &Tensor, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let c = out.cols();
    let mut gx = Vec::with_capacity(out.len());
    for (y, g) in out.data().chunks(c).zip(grad.chunks(c)) {
        let total: f64 = g.iter().sum();
        gx.extend(y.iter().zip(g).map(|(y, g)| g - y.exp() * total));
    }
    vec![(x, gx)]
}
