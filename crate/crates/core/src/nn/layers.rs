use cslr_tensor::{Padding, Tensor, Var};
use rand::Rng;

use super::params::{ParamKind, ParamStore};
use super::session::{Mode, Session};
use crate::error::{Error, Result};

/// Epsilon shared by layer norm and batch norm.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Swish,
}

impl Activation {
    fn apply(self, s: &mut Session, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Relu => s.tape.relu(x)?,
            Activation::Gelu => s.tape.gelu(x)?,
            Activation::Swish => s.tape.swish(x)?,
        })
    }
}

pub fn init_linear(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d_in: usize, d_out: usize, bias: bool) {
    store.insert_xavier(rng, format!("{prefix}.weight"), &[d_in, d_out], d_in, d_out);
    if bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros(&[d_out]), ParamKind::Bias);
    }
}

/// `x W (+ b)`; the bias is applied when the store has one.
pub fn linear(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let w = s.param(&format!("{prefix}.weight"))?;
    let y = s.tape.matmul(x, w)?;
    let bias = format!("{prefix}.bias");
    if s.store().get(&bias).is_none() {
        return Ok(y);
    }
    let b = s.param(&bias)?;
    Ok(s.tape.add_row(y, b)?)
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gain"), Tensor::ones(&[d]), ParamKind::NormGain);
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[d]), ParamKind::NormBias);
}

pub fn layer_norm(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let g = s.param(&format!("{prefix}.gain"))?;
    let b = s.param(&format!("{prefix}.bias"))?;
    Ok(s.tape.layer_norm(x, g, b, NORM_EPS)?)
}

pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, c: usize) {
    init_layer_norm(store, prefix, c);
    store.insert_norm_state(prefix, c);
}

/// Batch norm over a batch of sequences. Training mode pools statistics over
/// every frame of every sequence and records the moments on the session.
pub fn batch_norm(s: &mut Session, prefix: &str, xs: &[Var]) -> Result<Vec<Var>> {
    let g = s.param(&format!("{prefix}.gain"))?;
    let b = s.param(&format!("{prefix}.bias"))?;
    match s.mode() {
        Mode::Eval => {
            let state = s
                .store()
                .norm_state(prefix)
                .ok_or_else(|| Error::Config(format!("model has no batch-norm state {prefix}")))?;
            xs.iter()
                .map(|x| Ok(s.tape.batch_norm_eval(*x, g, b, state, NORM_EPS)?))
                .collect()
        }
        Mode::Train => {
            let joined = if xs.len() == 1 { xs[0] } else { s.tape.concat_rows(xs)? };
            let (y, moments) = s.tape.batch_norm_train(joined, g, b, NORM_EPS)?;
            s.record_moments(prefix, moments);
            if xs.len() == 1 {
                return Ok(vec![y]);
            }
            let mut out = Vec::with_capacity(xs.len());
            let mut start = 0;
            for x in xs {
                let len = s.tape.shape(*x)[0];
                out.push(s.tape.slice_rows(y, start, len)?);
                start += len;
            }
            Ok(out)
        }
    }
}

/// Convolution weights `[k × C_in × C_out]` (no bias, batch norm follows) and
/// the batch norm after it.
pub fn init_conv_stage(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, k: usize, c_in: usize, c_out: usize) {
    store.insert_xavier(rng, format!("{prefix}.conv.weight"), &[k, c_in, c_out], k * c_in, k * c_out);
    init_batch_norm(store, &format!("{prefix}.bn"), c_out);
}

/// conv1d (same padding) → batch norm → ReLU, applied to a batch.
pub fn conv_stage(s: &mut Session, prefix: &str, xs: &[Var], stride: usize) -> Result<Vec<Var>> {
    let w = s.param(&format!("{prefix}.conv.weight"))?;
    let conv = xs
        .iter()
        .map(|x| Ok(s.tape.conv1d(*x, w, stride, Padding::Same)?))
        .collect::<Result<Vec<_>>>()?;
    let normed = batch_norm(s, &format!("{prefix}.bn"), &conv)?;
    normed.into_iter().map(|x| Ok(s.tape.relu(x)?)).collect()
}

/// Projections for multi-head attention where queries and keys read a
/// `qk_dim`-wide source and values a `v_dim`-wide one.
pub fn init_attention(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, qk_dim: usize, v_dim: usize, d: usize) {
    init_linear(store, rng, &format!("{prefix}.q"), qk_dim, d, false);
    init_linear(store, rng, &format!("{prefix}.k"), qk_dim, d, false);
    init_linear(store, rng, &format!("{prefix}.v"), v_dim, d, false);
    init_linear(store, rng, &format!("{prefix}.out"), d, d, true);
}

pub struct AttentionOutput {
    pub out: Var,
    /// Per-head `T × T` attention matrices.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention without masking. Self-attention
/// passes the same buffer as both sources.
pub fn attention(s: &mut Session, prefix: &str, qk_src: Var, v_src: Var, heads: usize) -> Result<AttentionOutput> {
    let (tq, tv) = (s.tape.shape(qk_src)[0], s.tape.shape(v_src)[0]);
    if tq != tv {
        return Err(Error::Config(format!(
            "attention {prefix}: query source has {tq} frames, value source {tv}"
        )));
    }
    let q = linear(s, &format!("{prefix}.q"), qk_src)?;
    let k = linear(s, &format!("{prefix}.k"), qk_src)?;
    let v = linear(s, &format!("{prefix}.v"), v_src)?;
    let d = s.tape.shape(q)[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = s.tape.slice_cols(q, h * dk, dk)?;
        let kh = s.tape.slice_cols(k, h * dk, dk)?;
        let vh = s.tape.slice_cols(v, h * dk, dk)?;
        let kt = s.tape.transpose(kh)?;
        let scores = s.tape.matmul(qh, kt)?;
        let scores = s.tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let a = s.tape.softmax_rows(scores)?;
        outs.push(s.tape.matmul(a, vh)?);
        weights.push(a);
    }
    let joined = if heads == 1 { outs[0] } else { s.tape.concat_cols(&outs)? };
    let out = linear(s, &format!("{prefix}.out"), joined)?;
    Ok(AttentionOutput { out, weights })
}

pub fn init_ffn(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d: usize, hidden: usize) {
    init_linear(store, rng, &format!("{prefix}.in"), d, hidden, true);
    init_linear(store, rng, &format!("{prefix}.out"), hidden, d, true);
}

/// Linear → activation → dropout → linear.
pub fn ffn(s: &mut Session, prefix: &str, x: Var, act: Activation, dropout: f64) -> Result<Var> {
    let h = linear(s, &format!("{prefix}.in"), x)?;
    let h = act.apply(s, h)?;
    let h = s.dropout(h, dropout)?;
    linear(s, &format!("{prefix}.out"), h)
}

/// Sinusoidal encoding: `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1]` the
/// matching cosine.
pub fn positional_encoding(t: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs an even width, got {d}")));
    }
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Ok(Tensor::new(&[t.max(1), d], data)?)
}
