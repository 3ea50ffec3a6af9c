use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use cslr_tensor::Tensor;

use super::loss::{ctc_loss, log_add, LOG_ZERO};
use super::{GlossSequence, BLANK};
use crate::error::Error;

/// Best path: per-frame argmax (lowest index on ties), collapse repeats,
/// drop blanks.
pub fn greedy_decode(log_probs: &Tensor) -> GlossSequence {
    let mut out = Vec::new();
    let mut prev = BLANK;
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let best = row
            .iter()
            .enumerate()
            .fold(0, |best, (k, v)| if *v > row[best] { k } else { best });
        if best != prev && best != BLANK {
            out.push(best);
        }
        prev = best;
    }
    GlossSequence::new(out).expect("blank removed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: GlossSequence,
    /// Log probability summed over every path that collapses to `labels`.
    pub log_prob: f64,
}

#[derive(Clone, Copy)]
struct PrefixScore {
    blank: f64,
    non_blank: f64,
}

impl PrefixScore {
    const ZERO: Self = Self {
        blank: LOG_ZERO,
        non_blank: LOG_ZERO,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Prefix beam search without a language model, keeping `beam_width`
/// prefixes per frame. Returns the surviving hypotheses with their exact
/// probabilities, best first; ties go to the lexicographically smaller
/// labels so results are deterministic.
pub fn beam_search(log_probs: &Tensor, beam_width: usize) -> Vec<Hypothesis> {
    let width = beam_width.max(1);
    let mut beams: Vec<(Vec<usize>, PrefixScore)> = vec![(
        Vec::new(),
        PrefixScore {
            blank: 0.0,
            non_blank: LOG_ZERO,
        },
    )];
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let mut next: BTreeMap<Vec<usize>, PrefixScore> = BTreeMap::new();
        for (prefix, score) in &beams {
            let total = score.total();
            let entry = next.entry(prefix.clone()).or_insert(PrefixScore::ZERO);
            entry.blank = log_add(entry.blank, total + row[BLANK]);

            for (c, &p) in row.iter().enumerate().skip(1) {
                let mut extended = prefix.clone();
                extended.push(c);
                if prefix.last() == Some(&c) {
                    // Staying on c keeps the prefix; c after a blank extends it.
                    let same = next.entry(prefix.clone()).or_insert(PrefixScore::ZERO);
                    same.non_blank = log_add(same.non_blank, score.non_blank + p);
                    let ext = next.entry(extended).or_insert(PrefixScore::ZERO);
                    ext.non_blank = log_add(ext.non_blank, score.blank + p);
                } else {
                    let ext = next.entry(extended).or_insert(PrefixScore::ZERO);
                    ext.non_blank = log_add(ext.non_blank, total + p);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, PrefixScore)> = next.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total()
                .partial_cmp(&a.1.total())
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.retain(|(_, s)| s.total() > LOG_ZERO);
        ranked.truncate(width);
        beams = ranked;
    }
    // Pruning can drop mass that flowed through discarded prefixes, so the
    // survivors are rescored with the exact forward recursion.
    let mut out: Vec<Hypothesis> = beams
        .into_iter()
        .map(|(labels, _)| {
            let labels = GlossSequence::new(labels).expect("blank never appended");
            let log_prob = -ctc_loss(log_probs, &labels).expect("decoded labels are alignable").loss;
            Hypothesis { labels, log_prob }
        })
        .collect();
    out.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.labels.cmp(&b.labels))
    });
    out
}

pub fn beam_decode(log_probs: &Tensor, beam_width: usize) -> GlossSequence {
    beam_search(log_probs, beam_width)
        .into_iter()
        .next()
        .map(|h| h.labels)
        .unwrap_or_default()
}

/// Decoding strategy, written `greedy` or `beam:K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoder {
    Greedy,
    Beam(usize),
}

impl Decoder {
    pub fn decode(&self, log_probs: &Tensor) -> GlossSequence {
        match self {
            Decoder::Greedy => greedy_decode(log_probs),
            Decoder::Beam(k) => beam_decode(log_probs, *k),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decoder::Greedy => f.write_str("greedy"),
            Decoder::Beam(k) => write!(f, "beam:{k}"),
        }
    }
}

impl FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "greedy" {
            return Ok(Decoder::Greedy);
        }
        match s.strip_prefix("beam:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(Decoder::Beam(k)),
            _ => Err(Error::Config(format!("decoder must be `greedy` or `beam:K` with K ≥ 1, got {s:?}"))),
        }
    }
}
