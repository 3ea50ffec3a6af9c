//! Decoding a labelled set and scoring it with pooled WER.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::ctc::{Decoder, GlossSequence, GlossVocabulary};
use crate::error::{Error, Result};
use crate::metrics::{edit_ops, EditOps};
use crate::models::Model;
use crate::train::Example;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResult {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    #[serde(flatten)]
    pub ops: EditOps,
    /// `None` for an empty reference.
    pub wer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub decoder: Decoder,
    pub samples: Vec<SampleResult>,
    pub total: EditOps,
    /// Σ(S + I + D) / ΣN over all samples.
    pub wer: f64,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    summary: bool,
    decoder: String,
    samples: usize,
    #[serde(flatten)]
    total: &'a EditOps,
    wer: f64,
}

impl EvalReport {
    /// One JSON record per sample, then a summary record.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for s in &self.samples {
            writeln!(w, "{}", serde_json::to_string(s).expect("record serializes"))?;
        }
        let summary = SummaryRecord {
            summary: true,
            decoder: self.decoder.to_string(),
            samples: self.samples.len(),
            total: &self.total,
            wer: self.wer,
        };
        writeln!(w, "{}", serde_json::to_string(&summary).expect("summary serializes"))
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let width = self.samples.iter().map(|s| s.id.len()).max().unwrap_or(2).max(2);
        let _ = writeln!(out, "{:<width$}  {:>3} {:>3} {:>3} {:>3}  {:>7}", "id", "S", "I", "D", "N", "WER");
        for s in &self.samples {
            let rate = s.wer.map_or("-".to_string(), |w| format!("{:.2}%", 100.0 * w));
            let _ = writeln!(
                out,
                "{:<width$}  {:>3} {:>3} {:>3} {:>3}  {:>7}",
                s.id, s.ops.s, s.ops.i, s.ops.d, s.ops.n, rate
            );
        }
        let t = &self.total;
        let _ = writeln!(
            out,
            "pooled WER {:.2}% (S={} I={} D={} N={}, decoder {})",
            100.0 * self.wer,
            t.s,
            t.i,
            t.d,
            t.n,
            self.decoder
        );
        out
    }
}

/// Errors unless the model was trained on exactly this vocabulary.
pub fn check_vocab(model: &Model, vocab: &GlossVocabulary) -> Result<()> {
    if model.vocab != *vocab {
        return Err(Error::Config(format!(
            "checkpoint vocabulary ({} glosses) differs from the dataset vocabulary ({} glosses)",
            model.vocab.len(),
            vocab.len()
        )));
    }
    Ok(())
}

/// Eval-mode decoding of every example, in input order.
pub fn decode_all(model: &Model, examples: &[Example], decoder: Decoder) -> Result<Vec<GlossSequence>> {
    examples
        .par_iter()
        .map(|e| Ok(decoder.decode(&model.log_probs(&e.features)?)))
        .collect()
}

pub fn score(
    vocab: &GlossVocabulary,
    examples: &[Example],
    hypotheses: &[GlossSequence],
    decoder: Decoder,
) -> Result<EvalReport> {
    let samples: Vec<SampleResult> = examples
        .iter()
        .zip(hypotheses)
        .map(|(e, h)| {
            let ops = edit_ops(e.target.ids(), h.ids());
            SampleResult {
                id: e.id.clone(),
                reference: vocab.decode(&e.target),
                hypothesis: vocab.decode(h),
                ops,
                wer: ops.rate().ok(),
            }
        })
        .collect();
    let total: EditOps = samples.iter().map(|s| s.ops).sum();
    Ok(EvalReport {
        decoder,
        wer: total.rate()?,
        samples,
        total,
    })
}

pub fn evaluate(model: &Model, examples: &[Example], decoder: Decoder) -> Result<EvalReport> {
    let hyps = decode_all(model, examples, decoder)?;
    score(&model.vocab, examples, &hyps, decoder)
}
