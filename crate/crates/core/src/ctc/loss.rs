use cslr_tensor::Tensor;

use super::{GlossSequence, BLANK};
use crate::error::{Error, Result};

/// Stand-in for log(0). Sums involving it stay at it.
pub const LOG_ZERO: f64 = -1e30;

fn is_zero(v: f64) -> bool {
    v <= LOG_ZERO
}

/// `log(exp(a) + exp(b))` with max shift.
pub fn log_add(a: f64, b: f64) -> f64 {
    if is_zero(a) {
        return b;
    }
    if is_zero(b) {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_mul(a: f64, b: f64) -> f64 {
    if is_zero(a) || is_zero(b) {
        LOG_ZERO
    } else {
        a + b
    }
}

#[derive(Debug, Clone)]
pub struct CtcLoss {
    /// `−log P(target | input)`.
    pub loss: f64,
    /// d(loss)/d(log_probs).
    pub grad: Tensor,
}

/// CTC negative log-likelihood of `target` under per-frame log-probabilities
/// `log_probs[T × (|V|+1)]`, via the forward–backward recursion over the
/// blank-interleaved label sequence.
pub fn ctc_loss(log_probs: &Tensor, target: &GlossSequence) -> Result<CtcLoss> {
    let (t_len, width) = (log_probs.rows(), log_probs.cols());
    if let Some(&bad) = target.ids().iter().find(|&&id| id >= width) {
        return Err(Error::Vocabulary(format!("label {bad} outside output width {width}")));
    }
    let required = target.required_frames();
    if t_len < required {
        return Err(Error::InfeasibleAlignment {
            id: String::new(),
            frames: t_len,
            required,
        });
    }

    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target.ids() {
        ext.push(l);
        ext.push(BLANK);
    }
    let s_len = ext.len();
    let lp = |t: usize, s: usize| log_probs.get(t, ext[s]);
    // Skip transition s-2 → s allowed onto a label differing from the previous label.
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![LOG_ZERO; t_len * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = log_mul(a, lp(t, s));
        }
    }

    let mut beta = vec![LOG_ZERO; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            cur[s] = log_mul(b, lp(t, s));
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if is_zero(log_p) || !log_p.is_finite() {
        return Err(Error::Tensor(cslr_tensor::TensorError::NonFinite { op: "ctc_loss" }));
    }

    // d(−log P)/d lp[t,k] = −Σ_{s: ext[s]=k} α_t(s)·β_t(s) / (y_t(k)·P)
    let mut grad = Tensor::zeros(&[t_len, width]);
    let mut occupancy = vec![LOG_ZERO; width];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|o| *o = LOG_ZERO);
        for s in 0..s_len {
            let ab = log_mul(alpha[t * s_len + s], beta[t * s_len + s]);
            occupancy[ext[s]] = log_add(occupancy[ext[s]], ab);
        }
        let row = &mut grad.data_mut()[t * width..(t + 1) * width];
        for (k, g) in row.iter_mut().enumerate() {
            if !is_zero(occupancy[k]) {
                *g = -(occupancy[k] - log_probs.get(t, k) - log_p).exp();
            }
        }
    }
    Ok(CtcLoss { loss: -log_p, grad })
}
