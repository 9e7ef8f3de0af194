//! The actor-critic: token embedding, two stacked LSTM layers, a mean over
//! the top layer's outputs, and two linear heads (policy logits and value).
//!
//! All parameters live in one flat vector so that the optimizer, gradient
//! clipping and snapshots treat them uniformly; [`NetShape`] knows where each
//! matrix starts.

mod checkpoint;
mod loss;
mod lstm;
mod scalar;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{bootstrap_returns, entropy, loss_and_grads, LossStats, Step, Trajectory};
pub use lstm::{forward, forward_batch, Forward};
pub use scalar::Scalar;

pub const EMBED_DIM: usize = 24;
pub const HIDDEN: usize = 128;
pub const LAYERS: usize = 2;
const INIT_SCALE: f64 = 0.05;
const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl NetShape {
    pub fn paper(vocab: usize) -> Self {
        NetShape {
            vocab,
            embed: EMBED_DIM,
            hidden: HIDDEN,
            actions: NUM_ACTIONS,
        }
    }

    /// Input width of layer `l`.
    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.embed
        } else {
            self.hidden
        }
    }

    pub fn embedding(&self) -> Range<usize> {
        0..self.vocab * self.embed
    }

    /// Gate weights of layer `l`: `4H` rows (input, forget, cell, output
    /// gate blocks) of `[input | recurrent]` columns.
    pub fn lstm_weights(&self, l: usize) -> Range<usize> {
        let mut start = self.embedding().end;
        for k in 0..l {
            start = self.lstm_bias(k).end;
        }
        start..start + 4 * self.hidden * (self.layer_input(l) + self.hidden)
    }

    pub fn lstm_bias(&self, l: usize) -> Range<usize> {
        let start = self.lstm_weights(l).end;
        start..start + 4 * self.hidden
    }

    /// `actions × H`, row-major.
    pub fn policy_weights(&self) -> Range<usize> {
        let start = self.lstm_bias(LAYERS - 1).end;
        start..start + self.actions * self.hidden
    }

    pub fn policy_bias(&self) -> Range<usize> {
        let start = self.policy_weights().end;
        start..start + self.actions
    }

    pub fn value_weights(&self) -> Range<usize> {
        let start = self.policy_bias().end;
        start..start + self.hidden
    }

    pub fn value_bias(&self) -> Range<usize> {
        let start = self.value_weights().end;
        start..start + 1
    }

    pub fn n_params(&self) -> usize {
        self.value_bias().end
    }

    /// Named parameter groups, for reporting and gradient checks.
    pub fn groups(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("embedding", self.embedding()),
            ("lstm0.weights", self.lstm_weights(0)),
            ("lstm0.bias", self.lstm_bias(0)),
            ("lstm1.weights", self.lstm_weights(1)),
            ("lstm1.bias", self.lstm_bias(1)),
            ("policy.weights", self.policy_weights()),
            ("policy.bias", self.policy_bias()),
            ("value.weights", self.value_weights()),
            ("value.bias", self.value_bias()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    shape: NetShape,
    data: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform weights in ±0.05, zero biases except a forget-gate bias of 1.
    pub fn init(shape: NetShape, rng: &mut impl Rng) -> Self {
        let mut data = vec![T::zero(); shape.n_params()];
        let weights = [
            shape.embedding(),
            shape.lstm_weights(0),
            shape.lstm_weights(1),
            shape.policy_weights(),
            shape.value_weights(),
        ];
        for r in weights {
            for x in &mut data[r] {
                *x = T::of(rng.gen_range(-INIT_SCALE..=INIT_SCALE));
            }
        }
        let h = shape.hidden;
        for l in 0..LAYERS {
            let b = shape.lstm_bias(l);
            for x in &mut data[b.start + h..b.start + 2 * h] {
                *x = T::of(FORGET_BIAS);
            }
        }
        ModelParams { shape, data }
    }

    pub fn from_vec(shape: NetShape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.n_params() {
            return Err(Error::contract(format!(
                "{} values for a network of {} parameters",
                data.len(),
                shape.n_params()
            )));
        }
        Ok(ModelParams { shape, data })
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            shape: self.shape,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> ModelParams<T> {
    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
