//! Connectionist temporal classification: loss with exact gradients and
//! best-path / prefix-beam decoding. Output index 0 is the blank everywhere.

mod decode;
mod loss;
mod vocab;

pub use decode::{beam_decode, beam_search, greedy_decode, Decoder, Hypothesis};
pub use loss::{ctc_loss, log_add, CtcLoss, LOG_ZERO};
pub use vocab::{GlossSequence, GlossVocabulary, BLANK};
