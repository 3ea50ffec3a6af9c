use cslr_tensor::{BatchMoments, BatchNormState, Tensor};
use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a parameter; decides initialization and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub kind: ParamKind,
}

/// Insertion-ordered parameters plus batch-norm running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
    norms: IndexMap<String, BatchNormState>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) {
        let name = name.into();
        assert!(!self.params.contains_key(&name), "parameter {name} registered twice");
        self.params.insert(name, Param { value, kind });
    }

    /// Uniform(−a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn insert_xavier(
        &mut self,
        rng: &mut impl Rng,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
        let value = Tensor::new(shape, data).expect("shape matches data");
        self.insert(name, value, ParamKind::Weight);
    }

    pub fn insert_norm_state(&mut self, name: impl Into<String>, channels: usize) {
        self.norms.insert(name.into(), BatchNormState::new(channels));
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn norm_state(&self, name: &str) -> Option<&BatchNormState> {
        self.norms.get(name)
    }

    pub fn norm_state_mut(&mut self, name: &str) -> Option<&mut BatchNormState> {
        self.norms.get_mut(name)
    }

    pub fn norm_states(&self) -> impl Iterator<Item = (&str, &BatchNormState)> {
        self.norms.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn norm_states_mut(&mut self) -> impl Iterator<Item = (&str, &mut BatchNormState)> {
        self.norms.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Folds batch moments gathered in a training forward into the running
    /// statistics, in the order they were recorded.
    pub fn apply_moments(&mut self, moments: &[(String, BatchMoments)]) -> Result<()> {
        for (name, m) in moments {
            let state = self
                .norms
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("no batch-norm state named {name}")))?;
            state.update(m, BatchNormState::MOMENTUM);
        }
        Ok(())
    }
}
