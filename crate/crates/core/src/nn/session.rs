use std::collections::HashMap;

use cslr_tensor::{BatchMoments, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch norm on batch statistics, parameters trainable.
    Train,
    /// Dropout off, batch norm on running statistics, no gradients.
    Eval,
}

/// Gradients aligned with the store's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self(store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect())
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other · weight`.
    pub fn add_scaled(&mut self, other: &Gradients, weight: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += weight * y;
            }
        }
    }
}

/// One forward pass: a tape, the parameters bound onto it on first use,
/// and the batch-norm moments observed along the way.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: HashMap<String, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
    moments: Vec<(String, BatchMoments)>,
}

impl<'a> Session<'a> {
    /// `seed` drives dropout masks.
    pub fn new(store: &'a ParamStore, mode: Mode, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            moments: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))?;
        let v = match self.mode {
            Mode::Train => self.tape.leaf(p.value.clone()),
            Mode::Eval => self.tape.constant(p.value.clone()),
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if self.mode == Mode::Eval || p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let n = self.tape.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Ok(self.tape.mul_const(x, mask)?)
    }

    pub(crate) fn record_moments(&mut self, name: &str, m: BatchMoments) {
        self.moments.push((name.to_string(), m));
    }

    pub fn moments(&self) -> &[(String, BatchMoments)] {
        &self.moments
    }

    pub fn into_moments(self) -> Vec<(String, BatchMoments)> {
        self.moments
    }

    /// Backpropagates `loss` and collects parameter gradients; parameters the
    /// forward never touched get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.tape.backward(loss)?;
        let grads = self
            .store
            .iter()
            .map(|(name, p)| match self.bound.get(name).and_then(|v| self.tape.grad(*v)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.shape()),
            })
            .collect();
        Ok(Gradients(grads))
    }
}
