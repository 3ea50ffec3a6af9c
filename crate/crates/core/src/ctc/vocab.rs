use std::collections::HashMap;

use crate::error::{Error, Result};

/// Output index reserved for the CTC blank.
pub const BLANK: usize = 0;

/// Gloss tokens mapped to output indices `1..=len()`; index 0 is the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlossVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl GlossVocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Vocabulary("vocabulary must hold at least one gloss".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Vocabulary(format!("invalid gloss token {t:?}")));
            }
            if index.insert(t.clone(), i + 1).is_some() {
                return Err(Error::Vocabulary(format!("duplicate gloss token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Classifier width: every gloss plus the blank.
    pub fn output_width(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i)).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<GlossSequence> {
        let ids = tokens
            .iter()
            .map(|t| self.id(t.as_ref()).ok_or_else(|| Error::UnknownGloss(t.as_ref().to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(GlossSequence(ids))
    }

    pub fn decode(&self, seq: &GlossSequence) -> Vec<String> {
        seq.0
            .iter()
            .map(|&id| self.token(id).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// Label ids in `1..=|V|`; never contains [`BLANK`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct GlossSequence(Vec<usize>);

impl GlossSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.contains(&BLANK) {
            return Err(Error::Vocabulary("gloss sequence contains the blank index".into()));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Minimum frame count for a CTC alignment: one frame per label plus a
    /// separating blank between equal neighbors.
    pub fn required_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}
