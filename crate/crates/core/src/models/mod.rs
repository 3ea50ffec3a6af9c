//! The two recognizers behind one [`Model`] type.

pub mod conformer;
pub mod fusion;

use std::fmt;
use std::str::FromStr;

use cslr_tensor::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use conformer::ConformerConfig;
pub use fusion::FusionConfig;

use crate::ctc::GlossVocabulary;
use crate::error::{Error, Result};
use crate::nn::{Mode, ParamStore, Session};
use crate::pose::FEATURE_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "conformer_si")]
    ConformerSi,
    #[serde(rename = "fusion_us")]
    FusionUs,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ConformerSi => "conformer_si",
            ModelKind::FusionUs => "fusion_us",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conformer_si" => Ok(ModelKind::ConformerSi),
            "fusion_us" => Ok(ModelKind::FusionUs),
            _ => Err(Error::Config(format!("unknown model kind {s:?}; expected conformer_si or fusion_us"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", content = "config")]
pub enum ModelConfig {
    #[serde(rename = "conformer_si")]
    Conformer(ConformerConfig),
    #[serde(rename = "fusion_us")]
    Fusion(FusionConfig),
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::ConformerSi => ModelConfig::Conformer(ConformerConfig::default()),
            ModelKind::FusionUs => ModelConfig::Fusion(FusionConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Conformer(_) => ModelKind::ConformerSi,
            ModelConfig::Fusion(_) => ModelKind::FusionUs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Conformer(c) => c.validate(),
            ModelConfig::Fusion(c) => c.validate(),
        }
    }

    /// Number of logit frames produced for `t` input frames.
    pub fn output_len(&self, t: usize) -> Result<usize> {
        match self {
            ModelConfig::Conformer(c) => c.output_len(t),
            ModelConfig::Fusion(c) => c.output_len(t),
        }
    }
}

/// A recognizer: configuration, vocabulary and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: GlossVocabulary,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab: GlossVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = vocab.output_width();
        let params = match &config {
            ModelConfig::Conformer(c) => conformer::init(c, width, &mut rng),
            ModelConfig::Fusion(c) => fusion::init(c, width, &mut rng),
        };
        Ok(Self { config, vocab, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn output_width(&self) -> usize {
        self.vocab.output_width()
    }

    /// Per-frame logits for each `T × 172` input, recorded on `s`.
    pub fn forward(&self, s: &mut Session, batch: &[&Tensor]) -> Result<Vec<Var>> {
        for x in batch {
            if x.shape().len() != 2 || x.cols() != FEATURE_DIM {
                return Err(Error::Config(format!(
                    "model input must be T×{FEATURE_DIM}, got {:?}",
                    x.shape()
                )));
            }
        }
        let xs: Vec<Var> = batch.iter().map(|x| s.input((*x).clone())).collect();
        match &self.config {
            ModelConfig::Conformer(c) => conformer::forward(s, c, &xs),
            ModelConfig::Fusion(c) => fusion::forward(s, c, &xs),
        }
    }

    /// Eval-mode log-probabilities for one sequence.
    pub fn log_probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&self.params, Mode::Eval, 0);
        let logits = self.forward(&mut s, &[x])?[0];
        let lp = s.tape.log_softmax_rows(logits)?;
        Ok(s.tape.value(lp).clone())
    }
}
