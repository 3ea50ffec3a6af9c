//! Multi-scale fusion transformer: an attention-weights block and joint
//! attention over the raw features, a dual-path (full-rate and half-rate)
//! convolutional encoder fused on channels, a pre-norm transformer and an
//! MLP classifier.

use cslr_tensor::{TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conformer::add_positions;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, ParamStore, Session};
use crate::pose::FEATURE_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub d_model: usize,
    /// Heads of the attention-weights block and the joint attention.
    pub attn_heads: usize,
    pub n_transformer_blocks: usize,
    pub transformer_heads: usize,
    pub ffn_expansion: usize,
    pub main_channels: Vec<usize>,
    pub aux_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub mlp_hidden: usize,
    /// Dropout inside the classifier head.
    pub dropout: f64,
    /// Dropout on the transformer's residual branches.
    pub block_dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 144,
            attn_heads: 4,
            n_transformer_blocks: 4,
            transformer_heads: 4,
            ffn_expansion: 4,
            main_channels: vec![144, 144],
            aux_channels: vec![144, 144],
            conv_kernel: 3,
            mlp_hidden: 288,
            dropout: 0.2,
            block_dropout: 0.1,
        }
    }
}

impl FusionConfig {
    /// Width of the fused stream: last main width plus last aux width.
    pub fn d_ms(&self) -> usize {
        self.main_channels.last().copied().unwrap_or(0) + self.aux_channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("fusion: {m}")));
        if self.d_model == 0 || self.mlp_hidden == 0 || self.ffn_expansion == 0 {
            return bad("widths must be at least 1".into());
        }
        if self.attn_heads == 0 || !self.d_model.is_multiple_of(self.attn_heads) {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.attn_heads));
        }
        if self.main_channels.is_empty() || self.aux_channels.is_empty() {
            return bad("main and aux paths need at least one stage".into());
        }
        if self.main_channels.contains(&0) || self.aux_channels.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        let d_ms = self.d_ms();
        if !d_ms.is_multiple_of(2) {
            return bad(format!("fused width {d_ms} must be even for positional encoding"));
        }
        if self.transformer_heads == 0 || !d_ms.is_multiple_of(self.transformer_heads) {
            return bad(format!("fused width {d_ms} not divisible by {} heads", self.transformer_heads));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad("conv_kernel must be odd".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.block_dropout) {
            return bad("dropout outside [0, 1)".into());
        }
        Ok(())
    }

    pub fn output_len(&self, t: usize) -> Result<usize> {
        if t < 2 {
            return Err(TensorError::SequenceTooShort {
                op: "dual_path_encode",
                len: t,
                need: 2,
            }
            .into());
        }
        Ok(t)
    }
}

pub(crate) fn init(cfg: &FusionConfig, output_width: usize, rng: &mut impl Rng) -> ParamStore {
    let mut store = ParamStore::new();
    let d = cfg.d_model;
    nn::init_linear(&mut store, rng, "awb.proj", FEATURE_DIM, d, true);
    nn::init_attention(&mut store, rng, "awb.attn", d, d, d);
    nn::init_layer_norm(&mut store, "awb.norm", d);
    nn::init_attention(&mut store, rng, "joint", FEATURE_DIM, d, d);
    for (path, widths) in [("main", &cfg.main_channels), ("aux", &cfg.aux_channels)] {
        let mut c_in = d;
        for (i, &c) in widths.iter().enumerate() {
            nn::init_conv_stage(&mut store, rng, &format!("{path}.{i}"), cfg.conv_kernel, c_in, c);
            c_in = c;
        }
    }
    let d_ms = cfg.d_ms();
    for b in 0..cfg.n_transformer_blocks {
        let p = format!("transformer.{b}");
        nn::init_layer_norm(&mut store, &format!("{p}.attn.norm"), d_ms);
        nn::init_attention(&mut store, rng, &format!("{p}.attn"), d_ms, d_ms, d_ms);
        nn::init_layer_norm(&mut store, &format!("{p}.ffn.norm"), d_ms);
        nn::init_ffn(&mut store, rng, &format!("{p}.ffn"), d_ms, d_ms * cfg.ffn_expansion);
    }
    nn::init_linear(&mut store, rng, "head.hidden", d_ms, cfg.mlp_hidden, true);
    nn::init_linear(&mut store, rng, "head.out", cfg.mlp_hidden, output_width, true);
    store
}

/// Projection to `d_model`, one self-attention layer, residual, layer norm.
pub fn attention_weights_block(s: &mut Session, cfg: &FusionConfig, x: Var) -> Result<Var> {
    let h = nn::linear(s, "awb.proj", x)?;
    let a = nn::attention(s, "awb.attn", h, h, cfg.attn_heads)?.out;
    let r = s.tape.add(h, a)?;
    nn::layer_norm(s, "awb.norm", r)
}

/// Cross-attention: queries and keys from the raw features, values from the
/// attention-weights block output.
pub fn joint_attention(s: &mut Session, cfg: &FusionConfig, x: Var, h_att: Var) -> Result<nn::AttentionOutput> {
    nn::attention(s, "joint", x, h_att, cfg.attn_heads)
}

/// Nearest-repeat upsampling index: output frame `i` reads aux frame
/// `min(i / 2, n − 1)`.
pub fn upsample_index(t: usize, n: usize) -> Vec<usize> {
    (0..t).map(|i| (i / 2).min(n - 1)).collect()
}

pub struct DualPath {
    pub fused: Vec<Var>,
    /// Aux-path length after pooling, per sequence.
    pub aux_len: Vec<usize>,
}

/// Main path at full rate; aux path runs its first stage at full rate, pools
/// by two, runs the remaining stages at half rate and is repeated back to
/// full length. The two are concatenated on channels.
pub fn dual_path_encode(s: &mut Session, cfg: &FusionConfig, xs: &[Var]) -> Result<DualPath> {
    for x in xs {
        cfg.output_len(s.tape.shape(*x)[0])?;
    }
    let mut main = xs.to_vec();
    for i in 0..cfg.main_channels.len() {
        main = nn::conv_stage(s, &format!("main.{i}"), &main, 1)?;
    }
    let mut aux = nn::conv_stage(s, "aux.0", xs, 1)?;
    aux = aux
        .into_iter()
        .map(|a| Ok(s.tape.maxpool1d(a, 2, 2)?))
        .collect::<Result<_>>()?;
    for i in 1..cfg.aux_channels.len() {
        aux = nn::conv_stage(s, &format!("aux.{i}"), &aux, 1)?;
    }
    let mut fused = Vec::with_capacity(xs.len());
    let mut aux_len = Vec::with_capacity(xs.len());
    for ((x, m), a) in xs.iter().zip(main).zip(aux) {
        let (t, n) = (s.tape.shape(*x)[0], s.tape.shape(a)[0]);
        let up = s.tape.gather_rows(a, upsample_index(t, n))?;
        fused.push(s.tape.concat_cols(&[m, up])?);
        aux_len.push(n);
    }
    Ok(DualPath { fused, aux_len })
}

/// Positions added once, then pre-norm blocks: LN → MHSA → residual,
/// LN → FFN(GELU) → residual.
pub fn transformer_encode(s: &mut Session, cfg: &FusionConfig, x: Var) -> Result<Var> {
    let mut z = add_positions(s, &[x])?[0];
    for b in 0..cfg.n_transformer_blocks {
        let p = format!("transformer.{b}");
        let h = nn::layer_norm(s, &format!("{p}.attn.norm"), z)?;
        let a = nn::attention(s, &format!("{p}.attn"), h, h, cfg.transformer_heads)?.out;
        let a = s.dropout(a, cfg.block_dropout)?;
        z = s.tape.add(z, a)?;
        let h = nn::layer_norm(s, &format!("{p}.ffn.norm"), z)?;
        let f = nn::ffn(s, &format!("{p}.ffn"), h, Activation::Gelu, cfg.block_dropout)?;
        let f = s.dropout(f, cfg.block_dropout)?;
        z = s.tape.add(z, f)?;
    }
    Ok(z)
}

/// Linear → GELU → dropout → linear.
pub fn classify_mlp(s: &mut Session, cfg: &FusionConfig, h: Var) -> Result<Var> {
    let h = nn::linear(s, "head.hidden", h)?;
    let h = s.tape.gelu(h)?;
    let h = s.dropout(h, cfg.dropout)?;
    nn::linear(s, "head.out", h)
}

pub(crate) fn forward(s: &mut Session, cfg: &FusionConfig, xs: &[Var]) -> Result<Vec<Var>> {
    let mut joint = Vec::with_capacity(xs.len());
    for &x in xs {
        let h_att = attention_weights_block(s, cfg, x)?;
        joint.push(joint_attention(s, cfg, x, h_att)?.out);
    }
    let fused = dual_path_encode(s, cfg, &joint)?.fused;
    fused
        .into_iter()
        .map(|f| {
            let h = transformer_encode(s, cfg, f)?;
            classify_mlp(s, cfg, h)
        })
        .collect()
}
