//! CTC training: AdamW with decoupled weight decay, cosine annealing per
//! epoch, global-norm gradient clipping, best-dev-WER checkpointing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use cslr_tensor::{BatchMoments, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::ctc::{ctc_loss, Decoder, GlossSequence};
use crate::error::{Error, Result};
use crate::eval;
use crate::models::Model;
use crate::nn::{Gradients, Mode, ParamStore, Session};
use crate::pose::{preprocess, Sample};

/// Preprocessed input paired with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Tensor,
    pub target: GlossSequence,
}

impl Example {
    pub fn from_sample(sample: &Sample, torso: &[usize]) -> Result<Self> {
        let f = preprocess(&sample.sequence, torso)?;
        Ok(Self {
            id: f.id,
            features: f.data,
            target: sample.target.clone(),
        })
    }
}

/// Preprocesses samples in parallel, keeping their order.
pub fn prepare(samples: &[Sample], torso: &[usize]) -> Result<Vec<Example>> {
    samples.par_iter().map(|s| Example::from_sample(s, torso)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip_norm: f64,
    /// Data-parallel workers per batch; 1 is bit-reproducible.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            lr_min: 1e-6,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 60,
            seed: 0,
            grad_clip_norm: 5.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "lr",
        "lr_min",
        "weight_decay",
        "beta1",
        "beta2",
        "eps",
        "batch_size",
        "epochs",
        "seed",
        "grad_clip_norm",
        "workers",
    ];

    // Negated comparisons so NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.lr > 0.0) || self.lr_min < 0.0 || self.lr_min > self.lr {
            return bad("need lr > 0 and 0 ≤ lr_min ≤ lr");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.workers == 0 {
            return bad("batch_size, epochs and workers must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps be positive");
        }
        if self.weight_decay < 0.0 || !(self.grad_clip_norm > 0.0) {
            return bad("weight_decay must be ≥ 0 and grad_clip_norm > 0");
        }
        Ok(())
    }

    /// Cosine annealing from `lr` at epoch 0 to `lr_min` at the final epoch
    /// (`epochs − 1`) and beyond.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let last = self.epochs.saturating_sub(1);
        if epoch == 0 {
            return self.lr;
        }
        if epoch >= last {
            return self.lr_min;
        }
        let progress = epoch as f64 / last as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// AdamW with PyTorch's ordering: decay the weights, then apply the
/// bias-corrected Adam step. Only [`crate::nn::ParamKind::Weight`] decays.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            m: Gradients::zeros_like(store),
            v: Gradients::zeros_like(store),
            step: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, cfg: &TrainConfig, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let decay = if p.kind.decays() { 1.0 - lr * cfg.weight_decay } else { 1.0 };
            let (m, v, g) = (self.m.0[i].data_mut(), self.v.0[i].data_mut(), grads.0[i].data());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + cfg.eps);
                *w = *w * decay - lr * update;
            }
        }
    }
}

/// Scales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Errors with the first sample whose target cannot be aligned to the
/// model's output length.
pub fn check_feasible(model: &Model, examples: &[Example]) -> Result<()> {
    for e in examples {
        let required = e.target.required_frames();
        let frames = model.config.output_len(e.features.rows()).unwrap_or(0);
        if frames < required.max(1) {
            return Err(Error::InfeasibleAlignment {
                id: e.id.clone(),
                frames,
                required,
            });
        }
    }
    Ok(())
}

/// Summed CTC loss over `batch` and its parameter gradients.
pub struct BatchResult {
    pub loss_sum: f64,
    pub grads: Gradients,
    pub moments: Vec<(String, BatchMoments)>,
}

/// One training-mode forward and backward over a batch; batch norm pools the
/// whole batch.
pub fn batch_gradients(model: &Model, batch: &[&Example], dropout_seed: u64) -> Result<BatchResult> {
    let mut s = Session::new(&model.params, Mode::Train, dropout_seed);
    let inputs: Vec<&Tensor> = batch.iter().map(|e| &e.features).collect();
    let logits = model.forward(&mut s, &inputs)?;
    let mut total = None;
    let mut loss_sum = 0.0;
    for (y, e) in logits.into_iter().zip(batch) {
        let lp = s.tape.log_softmax_rows(y)?;
        let ctc = ctc_loss(s.tape.value(lp), &e.target).map_err(|err| match err {
            Error::InfeasibleAlignment { frames, required, .. } => Error::InfeasibleAlignment {
                id: e.id.clone(),
                frames,
                required,
            },
            other => other,
        })?;
        loss_sum += ctc.loss;
        let term = s.tape.external_scalar(lp, ctc.loss, ctc.grad)?;
        total = Some(match total {
            None => term,
            Some(t) => s.tape.add(t, term)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    let grads = s.backward(total)?;
    Ok(BatchResult {
        loss_sum,
        grads,
        moments: s.into_moments(),
    })
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits the batch into `workers` contiguous shards, computes each on its own
/// thread, and sums the results in shard order, so the reduction order is
/// fixed.
fn parallel_gradients(model: &Model, batch: &[&Example], workers: usize, step: u64, seed: u64) -> Result<BatchResult> {
    let shards: Vec<&[&Example]> = batch.chunks(batch.len().div_ceil(workers)).collect();
    if shards.len() == 1 {
        return batch_gradients(model, batch, mix(seed, step, 0));
    }
    let results: Vec<Result<BatchResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(w, shard)| scope.spawn(move || batch_gradients(model, shard, mix(seed, step, w as u64))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = BatchResult {
        loss_sum: 0.0,
        grads: Gradients::zeros_like(&model.params),
        moments: Vec::new(),
    };
    for r in results {
        let r = r?;
        out.loss_sum += r.loss_sum;
        out.grads.add_scaled(&r.grads, 1.0);
        out.moments.extend(r.moments);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample CTC loss over the epoch.
    pub mean_loss: f64,
    /// Greedy-decoded dev WER; absent without a dev set.
    pub dev_wer: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch of the kept checkpoint: best dev WER (later epochs win ties), or
    /// the last epoch without a dev set.
    pub best_epoch: usize,
    pub best: Model,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_GOOD_DIR: &str = "last_good";

/// Trains `model` in place. With `out_dir`, the best checkpoint and
/// `metrics.jsonl` are written there as training proceeds.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    train_set: &[Example],
    dev_set: &[Example],
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_feasible(model, train_set)?;
    check_feasible(model, dev_set)?;

    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            Some(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
        }
        None => None,
    };

    let mut opt = AdamW::new(&model.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let result = parallel_gradients(model, &batch, cfg.workers, step, cfg.seed);
            let diverged = |reason: String| -> Result<TrainReport> {
                if let Some(dir) = out_dir {
                    checkpoint::save(model, &dir.join(LAST_GOOD_DIR))?;
                }
                Err(Error::Divergence { epoch, reason })
            };
            let mut r = match result {
                Ok(r) => r,
                Err(Error::Tensor(e)) => return diverged(e.to_string()),
                Err(e) => return Err(e),
            };
            if !r.loss_sum.is_finite() {
                return diverged(format!("loss became {}", r.loss_sum));
            }
            r.grads.scale(1.0 / batch.len() as f64);
            let norm = clip_grad_norm(&mut r.grads, cfg.grad_clip_norm);
            if !norm.is_finite() {
                return diverged(format!("gradient norm became {norm}"));
            }
            opt.step(&mut model.params, &r.grads, cfg, lr);
            model.params.apply_moments(&r.moments)?;
            loss_sum += r.loss_sum;
            step += 1;
        }

        let dev_wer = if dev_set.is_empty() {
            None
        } else {
            Some(eval::evaluate(model, dev_set, Decoder::Greedy)?.wer)
        };
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / train_set.len() as f64,
            dev_wer,
            lr,
        };
        if let Some(w) = metrics.as_mut() {
            let line = serde_json::to_string(&log).expect("log serializes");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(out_dir.unwrap().join(METRICS_FILE), e))?;
        }
        logs.push(log);

        let score = dev_wer.unwrap_or(0.0);
        if best.as_ref().is_none_or(|(b, _, _)| score <= *b) {
            if let Some(dir) = out_dir {
                checkpoint::save(model, dir)?;
            }
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let cfg = TrainConfig {
            epochs: 11,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(10), 1e-6);
        assert_eq!(cfg.lr_at(11), 1e-6);
        assert!((cfg.lr_at(5) - (1e-4 + 1e-6) / 2.0).abs() < 1e-18);
        assert!((1..10).all(|e| cfg.lr_at(e) < cfg.lr_at(e - 1)));
    }

    #[test]
    fn steps_per_epoch_rounds_up() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.steps_per_epoch(32), 2);
        assert_eq!(cfg.steps_per_epoch(33), 3);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = Gradients(vec![Tensor::new(&[2], vec![3.0, 4.0]).unwrap()]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-15);
        assert_eq!(clip_grad_norm(&mut g, 2.0), g.global_norm());
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        use crate::nn::ParamKind;
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(&[2], vec![1.0, -1.0]).unwrap(), ParamKind::Weight);
        store.insert("b", Tensor::new(&[1], vec![1.0]).unwrap(), ParamKind::Bias);
        let cfg = TrainConfig::default();
        let mut opt = AdamW::new(&store);
        let g = Gradients(vec![
            Tensor::new(&[2], vec![0.5, -2.0]).unwrap(),
            Tensor::new(&[1], vec![3.0]).unwrap(),
        ]);
        opt.step(&mut store, &g, &cfg, 0.1);
        let w = store.get("w").unwrap().value.data().to_vec();
        // decay 1 − 0.1·0.01, then a unit-magnitude Adam step (up to eps).
        assert!((w[0] - (0.999 - 0.1)).abs() < 1e-6);
        assert!((w[1] - (-0.999 + 0.1)).abs() < 1e-6);
        let b = store.get("b").unwrap().value.data()[0];
        assert!((b - 0.9).abs() < 1e-6);
    }
}
