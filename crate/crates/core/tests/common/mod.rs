#![allow(dead_code)]

pub mod edits;

use cslr_core::ctc::GlossVocabulary;
use cslr_core::models::{ConformerConfig, FusionConfig, Model, ModelConfig};
use cslr_core::nn::{Mode, ParamStore, Session};
use cslr_core::Result;
use cslr_tensor::gradcheck::{relative_error, STEP};
use cslr_tensor::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn vocab(n: usize) -> GlossVocabulary {
    GlossVocabulary::new((0..n).map(|i| format!("g{i}")).collect()).unwrap()
}

pub fn desk_conformer() -> ModelConfig {
    ModelConfig::Conformer(ConformerConfig {
        d_model: 16,
        n_blocks: 1,
        n_heads: 2,
        conv_kernel: 3,
        ffn_expansion: 2,
        encoder_channels: vec![16],
        encoder_kernel: 3,
        encoder_stride: 1,
        dropout: 0.0,
    })
}

pub fn desk_fusion() -> ModelConfig {
    ModelConfig::Fusion(FusionConfig {
        d_model: 16,
        attn_heads: 2,
        n_transformer_blocks: 1,
        transformer_heads: 2,
        ffn_expansion: 2,
        main_channels: vec![8],
        aux_channels: vec![8],
        conv_kernel: 3,
        mlp_hidden: 16,
        dropout: 0.0,
        block_dropout: 0.0,
    })
}

/// Worst relative error between analytic and central-difference gradients
/// of `build`'s scalar output w.r.t. every parameter in `store`, plus the
/// name of the parameter where it occurred.
pub fn param_gradcheck<F>(store: &mut ParamStore, build: F) -> (f64, String)
where
    F: Fn(&mut Session) -> Result<Var>,
{
    param_gradcheck_sampled(store, usize::MAX, 0, build)
}

/// As [`param_gradcheck`], but probes at most `per_param` randomly chosen
/// entries of each parameter.
pub fn param_gradcheck_sampled<F>(store: &mut ParamStore, per_param: usize, seed: u64, build: F) -> (f64, String)
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let analytic = {
        let mut s = Session::new(store, Mode::Train, 0);
        let loss = build(&mut s).unwrap();
        s.backward(loss).unwrap()
    };
    let eval = |store: &ParamStore| {
        let mut s = Session::new(store, Mode::Train, 0);
        let loss = build(&mut s).unwrap();
        s.tape.value(loss).item()
    };
    let mut r = rng(seed);
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let mut worst = (0.0, String::new());
    for (i, name) in names.iter().enumerate() {
        let len = store.get(name).unwrap().value.len();
        let entries: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut r, len, per_param).into_vec()
        };
        for j in entries {
            let orig = store.get(name).unwrap().value.data()[j];
            store.get_mut(name).unwrap().value.data_mut()[j] = orig + STEP;
            let plus = eval(store);
            store.get_mut(name).unwrap().value.data_mut()[j] = orig - STEP;
            let minus = eval(store);
            store.get_mut(name).unwrap().value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let e = relative_error(analytic.0[i].data()[j], numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{j}]"));
            }
        }
    }
    worst
}

/// Σ W ⊙ logits over the batch with fixed random weights: a scalar whose
/// gradient exercises every output entry.
pub fn projected_loss(model: &Model, s: &mut Session, inputs: &[Tensor], seed: u64) -> Result<Var> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let logits = model.forward(s, &refs)?;
    let mut r = rng(seed);
    let mut total = None;
    for y in logits {
        let w = random_tensor(&mut r, s.tape.shape(y), 1.0);
        let term = cslr_tensor::gradcheck::weighted_sum(&mut s.tape, y, w)?;
        total = Some(match total {
            None => term,
            Some(t) => s.tape.add(t, term)?,
        });
    }
    Ok(total.expect("non-empty batch"))
}
