use crate::error::{dim_err, Result, TensorError};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct NormSaved {
    pub x: Var,
    pub gain: Var,
    pub bias: Var,
    pub xhat: Vec<f64>,
    /// Per row for layer norm, per channel for batch norm.
    pub inv_std: Vec<f64>,
}

/// Per-channel moments of one training batch. `var` is the unbiased estimate
/// fed into the running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Running statistics used by batch norm in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl BatchNormState {
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }

    /// Exponential moving average update; the first update also marks the
    /// state usable for evaluation.
    pub fn update(&mut self, batch: &BatchMoments, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        self.initialized = true;
    }
}

fn check_affine(tape: &Tape, op: &'static str, x: Var, gain: Var, bias: Var) -> Result<usize> {
    let c = tape.value(x).cols();
    if tape.value(gain).len() != c || tape.value(bias).len() != c {
        return Err(dim_err(op, format!("gain/bias must have {c} values")));
    }
    Ok(c)
}

impl Tape {
    /// Normalizes each row over the last axis, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = check_affine(self, "layer_norm", x, gain, bias)?;
        let v = self.value(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = Vec::with_capacity(v.len());
        let mut inv_std = Vec::with_capacity(v.rows());
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, r) in row.iter().enumerate() {
                let h = (r - mean) * is;
                xhat.push(h);
                data.push(g[j] * h + b[j]);
            }
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm(NormSaved {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            }),
        )
    }

    /// Training-mode batch norm. Statistics pool every row (batch and time)
    /// per channel, i.e. the last axis. Returns the batch moments so the
    /// caller can update its running state.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<(Var, BatchMoments)> {
        let c = check_affine(self, "batch_norm", x, gain, bias)?;
        let v = self.value(x);
        let n = v.rows();
        if n < 2 {
            return Err(TensorError::SequenceTooShort {
                op: "batch_norm",
                len: n,
                need: 2,
            });
        }
        let mut mean = vec![0.0; c];
        for row in v.data().chunks(c) {
            for (m, r) in mean.iter_mut().zip(row) {
                *m += r;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = vec![0.0; c];
        for row in v.data().chunks(c) {
            for j in 0..c {
                ss[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let inv_std: Vec<f64> = ss.iter().map(|s| 1.0 / (s / n as f64 + eps).sqrt()).collect();
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = Vec::with_capacity(v.len());
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                data.push(g[j] * h + b[j]);
            }
        }
        let moments = BatchMoments {
            var: ss.iter().map(|s| s / (n - 1) as f64).collect(),
            mean,
        };
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let y = self.push(
            "batch_norm",
            out,
            Op::BatchNorm(NormSaved {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            }),
        )?;
        Ok((y, moments))
    }

    /// Evaluation-mode batch norm: a fixed per-channel affine map built from
    /// the running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        state: &BatchNormState,
        eps: f64,
    ) -> Result<Var> {
        let c = check_affine(self, "batch_norm", x, gain, bias)?;
        if !state.initialized {
            return Err(TensorError::UninitializedStats);
        }
        if state.mean.len() != c {
            return Err(dim_err("batch_norm", "running statistics width differs"));
        }
        let inv_std: Vec<f64> = state.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.value(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = Vec::with_capacity(v.len());
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - state.mean[j]) * inv_std[j];
                xhat.push(h);
                data.push(g[j] * h + b[j]);
            }
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(
            "batch_norm",
            out,
            Op::BatchNormEval {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }
}

fn affine_grads(s_xhat: &[f64], grad: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut ggain = vec![0.0; c];
    let mut gbias = vec![0.0; c];
    for (h, g) in s_xhat.chunks(c).zip(grad.chunks(c)) {
        for j in 0..c {
            ggain[j] += g[j] * h[j];
            gbias[j] += g[j];
        }
    }
    (ggain, gbias)
}

pub(crate) fn layer_norm_backward(tape: &Tape, s: &NormSaved, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let d = tape.value(s.x).cols();
    let gain = tape.data(s.gain);
    let mut gx = Vec::with_capacity(grad.len());
    for ((h, g), is) in s.xhat.chunks(d).zip(grad.chunks(d)).zip(&s.inv_std) {
        let dh: Vec<f64> = g.iter().zip(gain).map(|(g, w)| g * w).collect();
        let mean_dh = dh.iter().sum::<f64>() / d as f64;
        let mean_dhh = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        gx.extend(dh.iter().zip(h).map(|(dh, h)| is * (dh - mean_dh - h * mean_dhh)));
    }
    let (ggain, gbias) = affine_grads(&s.xhat, grad, d);
    vec![(s.x, gx), (s.gain, ggain), (s.bias, gbias)]
}

pub(crate) fn batch_norm_backward(tape: &Tape, s: &NormSaved, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let v = tape.value(s.x);
    let (n, c) = (v.rows(), v.cols());
    let gain = tape.data(s.gain);
    let mut sum_dh = vec![0.0; c];
    let mut sum_dhh = vec![0.0; c];
    for (h, g) in s.xhat.chunks(c).zip(grad.chunks(c)) {
        for j in 0..c {
            let dh = g[j] * gain[j];
            sum_dh[j] += dh;
            sum_dhh[j] += dh * h[j];
        }
    }
    let nf = n as f64;
    let mut gx = Vec::with_capacity(grad.len());
    for (h, g) in s.xhat.chunks(c).zip(grad.chunks(c)) {
        for j in 0..c {
            let dh = g[j] * gain[j];
            gx.push(s.inv_std[j] * (dh - sum_dh[j] / nf - h[j] * sum_dhh[j] / nf));
        }
    }
    let (ggain, gbias) = affine_grads(&s.xhat, grad, c);
    vec![(s.x, gx), (s.gain, ggain), (s.bias, gbias)]
}

pub(crate) fn batch_norm_eval_backward(
    tape: &Tape,
    x: Var,
    gain: Var,
    bias: Var,
    xhat: &[f64],
    inv_std: &[f64],
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let c = inv_std.len();
    let w = tape.data(gain);
    let gx = grad
        .chunks(c)
        .flat_map(|g| (0..c).map(move |j| g[j] * w[j] * inv_std[j]))
        .collect();
    let (ggain, gbias) = affine_grads(xhat, grad, c);
    vec![(x, gx), (gain, ggain), (bias, gbias)]
}
