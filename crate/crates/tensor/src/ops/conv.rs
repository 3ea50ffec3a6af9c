use crate::error::{dim_err, Result, TensorError};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Temporal zero-padding policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` zeros on each side; requires an odd kernel.
    Same,
    Valid,
    Explicit(usize),
}

impl Padding {
    fn resolve(self, op: &'static str, k: usize) -> Result<usize> {
        match self {
            Padding::Same if k.is_multiple_of(2) => Err(dim_err(op, format!("same padding needs an odd kernel, got {k}"))),
            Padding::Same => Ok((k - 1) / 2),
            Padding::Valid => Ok(0),
            Padding::Explicit(p) => Ok(p),
        }
    }
}

/// `floor((len + 2·pad − k) / stride) + 1`, or an error when no window fits.
pub fn conv_output_len(op: &'static str, len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if len + 2 * pad < k {
        return Err(TensorError::SequenceTooShort {
            op,
            len,
            need: k.saturating_sub(2 * pad),
        });
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

fn as_sequence(tape: &Tape, op: &'static str, x: Var) -> Result<(usize, usize)> {
    let s = tape.shape(x);
    if s.len() != 2 {
        return Err(dim_err(op, format!("expects a [T×C] buffer, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

impl Tape {
    /// Temporal convolution: `x[T×C_in]` with `kernels[k×C_in×C_out]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (t, cin) = as_sequence(self, "conv1d", x)?;
        let ks = self.shape(kernels);
        if ks.len() != 3 || ks[1] != cin {
            return Err(dim_err("conv1d", format!("kernel shape {ks:?} for {cin} input channels")));
        }
        if stride == 0 {
            return Err(dim_err("conv1d", "stride must be at least 1"));
        }
        let (k, cout) = (ks[0], ks[2]);
        let pad = padding.resolve("conv1d", k)?;
        let t_out = conv_output_len("conv1d", t, k, stride, pad)?;
        let (xv, wv) = (self.data(x), self.data(kernels));
        let mut out = vec![0.0; t_out * cout];
        for to in 0..t_out {
            let orow = &mut out[to * cout..(to + 1) * cout];
            for j in 0..k {
                let Some(ti) = (to * stride + j).checked_sub(pad).filter(|ti| *ti < t) else {
                    continue;
                };
                for c in 0..cin {
                    let xval = xv[ti * cin + c];
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &wv[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                    for (o, w) in orow.iter_mut().zip(wrow) {
                        *o += xval * w;
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![t_out, cout], out);
        self.push(
            "conv1d",
            out,
            Op::Conv1d {
                x,
                w: kernels,
                stride,
                pad,
            },
        )
    }

    /// Per-channel temporal convolution with same padding: `x[T×C]`, `kernels[k×C]`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let (t, c) = as_sequence(self, "depthwise_conv1d", x)?;
        let ks = self.shape(kernels);
        if ks.len() != 2 || ks[1] != c {
            return Err(dim_err("depthwise_conv1d", format!("kernel shape {ks:?} for {c} channels")));
        }
        let k = ks[0];
        let pad = Padding::Same.resolve("depthwise_conv1d", k)?;
        let (xv, wv) = (self.data(x), self.data(kernels));
        let mut out = vec![0.0; t * c];
        for to in 0..t {
            for j in 0..k {
                let Some(ti) = (to + j).checked_sub(pad).filter(|ti| *ti < t) else {
                    continue;
                };
                for ch in 0..c {
                    out[to * c + ch] += xv[ti * c + ch] * wv[j * c + ch];
                }
            }
        }
        let out = Tensor::from_parts(vec![t, c], out);
        self.push("depthwise_conv1d", out, Op::Depthwise { x, w: kernels, pad })
    }

    /// Channel-wise max over temporal windows. Ties go to the earliest frame.
    pub fn maxpool1d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (t, c) = as_sequence(self, "maxpool1d", x)?;
        if k == 0 || stride == 0 {
            return Err(dim_err("maxpool1d", "kernel and stride must be at least 1"));
        }
        let t_out = conv_output_len("maxpool1d", t, k, stride, 0)?;
        let xv = self.data(x);
        let mut out = Vec::with_capacity(t_out * c);
        let mut argmax = Vec::with_capacity(t_out * c);
        for to in 0..t_out {
            for ch in 0..c {
                let mut best = to * stride;
                for ti in to * stride + 1..to * stride + k {
                    if xv[ti * c + ch] > xv[best * c + ch] {
                        best = ti;
                    }
                }
                out.push(xv[best * c + ch]);
                argmax.push(best * c + ch);
            }
        }
        let out = Tensor::from_parts(vec![t_out, c], out);
        self.push("maxpool1d", out, Op::MaxPool { x, argmax })
    }
}

pub(crate) fn conv1d_backward(
    tape: &Tape,
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
    out: &Tensor,
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let (t, cin) = (tape.value(x).rows(), tape.value(x).cols());
    let (k, cout) = (tape.shape(w)[0], tape.shape(w)[2]);
    let t_out = out.rows();
    let (xv, wv) = (tape.data(x), tape.data(w));
    let mut gx = vec![0.0; xv.len()];
    let mut gw = vec![0.0; wv.len()];
    for to in 0..t_out {
        let g = &grad[to * cout..(to + 1) * cout];
        for j in 0..k {
            let Some(ti) = (to * stride + j).checked_sub(pad).filter(|ti| *ti < t) else {
                continue;
            };
            for c in 0..cin {
                let base = (j * cin + c) * cout;
                let wrow = &wv[base..base + cout];
                gx[ti * cin + c] += g.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                let xval = xv[ti * cin + c];
                for (gw, g) in gw[base..base + cout].iter_mut().zip(g) {
                    *gw += xval * g;
                }
            }
        }
    }
    vec![(x, gx), (w, gw)]
}

pub(crate) fn depthwise_backward(tape: &Tape, x: Var, w: Var, pad: usize, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let (t, c) = (tape.value(x).rows(), tape.value(x).cols());
    let k = tape.shape(w)[0];
    let (xv, wv) = (tape.data(x), tape.data(w));
    let mut gx = vec![0.0; xv.len()];
    let mut gw = vec![0.0; wv.len()];
    for to in 0..t {
        for j in 0..k {
            let Some(ti) = (to + j).checked_sub(pad).filter(|ti| *ti < t) else {
                continue;
            };
            for ch in 0..c {
                let g = grad[to * c + ch];
                gx[ti * c + ch] += g * wv[j * c + ch];
                gw[j * c + ch] += g * xv[ti * c + ch];
            }
        }
    }
    vec![(x, gx), (w, gw)]
}

pub(crate) fn maxpool_backward(tape: &Tape, x: Var, argmax: &[usize], grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let mut gx = vec![0.0; tape.value(x).len()];
    for (&src, g) in argmax.iter().zip(grad) {
        gx[src] += g;
    }
    vec![(x, gx)]
}
