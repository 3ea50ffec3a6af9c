//! Signer-invariant conformer: convolutional temporal encoder, sinusoidal
//! positions, macaron conformer blocks and a linear gloss classifier.

use cslr_tensor::{conv_output_len, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, ParamStore, Session};
use crate::pose::FEATURE_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformerConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Depthwise kernel inside the convolution module.
    pub conv_kernel: usize,
    pub ffn_expansion: usize,
    /// Output widths of the encoder's conv stages; the last equals `d_model`.
    pub encoder_channels: Vec<usize>,
    pub encoder_kernel: usize,
    /// Applied by the first encoder stage.
    pub encoder_stride: usize,
    pub dropout: f64,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        Self {
            d_model: 144,
            n_blocks: 4,
            n_heads: 4,
            conv_kernel: 15,
            ffn_expansion: 4,
            encoder_channels: vec![128, 144],
            encoder_kernel: 3,
            encoder_stride: 1,
            dropout: 0.1,
        }
    }
}

impl ConformerConfig {
    /// Desk-scale preset: depthwise kernel 7.
    pub fn desk() -> Self {
        Self {
            conv_kernel: 7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("conformer: {m}")));
        if self.d_model == 0 || self.n_blocks == 0 || self.ffn_expansion == 0 || self.encoder_stride == 0 {
            return bad("widths, depth, expansion and stride must be at least 1".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if !self.d_model.is_multiple_of(2) {
            return bad("d_model must be even for positional encoding".into());
        }
        if self.conv_kernel.is_multiple_of(2) || self.encoder_kernel.is_multiple_of(2) {
            return bad("kernels must be odd".into());
        }
        if self.encoder_channels.last() != Some(&self.d_model) || self.encoder_channels.contains(&0) {
            return bad("encoder_channels must be non-empty, positive, and end at d_model".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn output_len(&self, t: usize) -> Result<usize> {
        let pad = (self.encoder_kernel - 1) / 2;
        Ok(conv_output_len("conv1d", t, self.encoder_kernel, self.encoder_stride, pad)?)
    }
}

pub(crate) fn init(cfg: &ConformerConfig, output_width: usize, rng: &mut impl Rng) -> ParamStore {
    let mut store = ParamStore::new();
    let mut c_in = FEATURE_DIM;
    for (i, &c) in cfg.encoder_channels.iter().enumerate() {
        nn::init_conv_stage(&mut store, rng, &format!("encoder.{i}"), cfg.encoder_kernel, c_in, c);
        c_in = c;
    }
    let d = cfg.d_model;
    for b in 0..cfg.n_blocks {
        let p = format!("block.{b}");
        for ffn in ["ffn1", "ffn2"] {
            nn::init_layer_norm(&mut store, &format!("{p}.{ffn}.norm"), d);
            nn::init_ffn(&mut store, rng, &format!("{p}.{ffn}"), d, d * cfg.ffn_expansion);
        }
        nn::init_layer_norm(&mut store, &format!("{p}.attn.norm"), d);
        nn::init_attention(&mut store, rng, &format!("{p}.attn"), d, d, d);
        nn::init_layer_norm(&mut store, &format!("{p}.conv.norm"), d);
        nn::init_linear(&mut store, rng, &format!("{p}.conv.pw1"), d, 2 * d, true);
        store.insert_xavier(rng, format!("{p}.conv.dw.weight"), &[cfg.conv_kernel, d], cfg.conv_kernel, cfg.conv_kernel);
        nn::init_batch_norm(&mut store, &format!("{p}.conv.bn"), d);
        nn::init_linear(&mut store, rng, &format!("{p}.conv.pw2"), d, d, true);
        nn::init_layer_norm(&mut store, &format!("{p}.norm"), d);
    }
    nn::init_layer_norm(&mut store, "head.norm", d);
    nn::init_linear(&mut store, rng, "head.out", d, output_width, true);
    store
}

/// Stacked conv → batch norm → ReLU stages, 172 → `d_model`.
pub fn temporal_encode(s: &mut Session, cfg: &ConformerConfig, xs: &[Var]) -> Result<Vec<Var>> {
    let mut h = xs.to_vec();
    for i in 0..cfg.encoder_channels.len() {
        let stride = if i == 0 { cfg.encoder_stride } else { 1 };
        h = nn::conv_stage(s, &format!("encoder.{i}"), &h, stride)?;
    }
    Ok(h)
}

pub fn add_positions(s: &mut Session, xs: &[Var]) -> Result<Vec<Var>> {
    xs.iter()
        .map(|x| {
            let (t, d) = (s.tape.shape(*x)[0], s.tape.shape(*x)[1]);
            let pe = s.input(nn::positional_encoding(t, d)?);
            Ok(s.tape.add(*x, pe)?)
        })
        .collect()
}

fn half_ffn(s: &mut Session, cfg: &ConformerConfig, prefix: &str, x: Var) -> Result<Var> {
    let h = nn::layer_norm(s, &format!("{prefix}.norm"), x)?;
    let h = nn::ffn(s, prefix, h, Activation::Swish, cfg.dropout)?;
    let h = s.dropout(h, cfg.dropout)?;
    let h = s.tape.scale(h, 0.5)?;
    Ok(s.tape.add(x, h)?)
}

/// One macaron block over a batch: ½FFN, self-attention, convolution module,
/// ½FFN, each residual, then a final layer norm.
pub fn block(s: &mut Session, cfg: &ConformerConfig, index: usize, xs: &[Var]) -> Result<Vec<Var>> {
    let p = format!("block.{index}");
    let mut zs = Vec::with_capacity(xs.len());
    for &x in xs {
        let z = half_ffn(s, cfg, &format!("{p}.ffn1"), x)?;
        let h = nn::layer_norm(s, &format!("{p}.attn.norm"), z)?;
        let a = nn::attention(s, &format!("{p}.attn"), h, h, cfg.n_heads)?.out;
        let a = s.dropout(a, cfg.dropout)?;
        zs.push(s.tape.add(z, a)?);
    }

    let dw = s.param(&format!("{p}.conv.dw.weight"))?;
    let mut gated = Vec::with_capacity(zs.len());
    for &z in &zs {
        let h = nn::layer_norm(s, &format!("{p}.conv.norm"), z)?;
        let h = nn::linear(s, &format!("{p}.conv.pw1"), h)?;
        let h = s.tape.glu(h)?;
        gated.push(s.tape.depthwise_conv1d(h, dw)?);
    }
    let normed = nn::batch_norm(s, &format!("{p}.conv.bn"), &gated)?;

    let mut out = Vec::with_capacity(zs.len());
    for (z, h) in zs.into_iter().zip(normed) {
        let h = s.tape.swish(h)?;
        let h = nn::linear(s, &format!("{p}.conv.pw2"), h)?;
        let h = s.dropout(h, cfg.dropout)?;
        let z = s.tape.add(z, h)?;
        let z = half_ffn(s, cfg, &format!("{p}.ffn2"), z)?;
        out.push(nn::layer_norm(s, &format!("{p}.norm"), z)?);
    }
    Ok(out)
}

/// Layer norm then a linear map to `|V_g| + 1` logits per frame.
pub fn classify(s: &mut Session, h: Var) -> Result<Var> {
    let h = nn::layer_norm(s, "head.norm", h)?;
    nn::linear(s, "head.out", h)
}

pub(crate) fn forward(s: &mut Session, cfg: &ConformerConfig, xs: &[Var]) -> Result<Vec<Var>> {
    let h = temporal_encode(s, cfg, xs)?;
    let mut h = add_positions(s, &h)?;
    for b in 0..cfg.n_blocks {
        h = block(s, cfg, b, &h)?;
    }
    h.into_iter().map(|x| classify(s, x)).collect()
}
