//! Actor-critic loss over a rollout and its gradient.
//!
//! Per step, with advantage `A = R - V(s)` held constant:
//!
//! ```text
//! L = -A·log π(a|s) - β·H(π(·|s)) + (R - V(s))²
//! ```
//!
//! Minimizing `L` ascends the policy gradient and the entropy bonus and
//! regresses the value toward the bootstrapped return.

use super::lstm::{backward_batch, Forward};
use super::{ModelParams, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Step<T> {
    pub fwd: Forward<T>,
    pub action: usize,
    pub reward: f64,
}

/// A rollout of at most `t_max` steps. `bootstrap` is the value estimate of
/// the state after the last step, or 0 if the episode ended there.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
    pub bootstrap: f64,
}

impl<T> Trajectory<T> {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        bootstrap_returns(&self.rewards(), self.bootstrap, gamma)
    }
}

/// `R_t = r_t + γ·R_{t+1}`, seeded with the bootstrap value.
pub fn bootstrap_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// `-Σ π log π` of a distribution.
pub fn entropy<T: Scalar>(probs: &[T]) -> T {
    -probs
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| p * p.ln())
        .sum::<T>()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Accumulates the gradient of the summed loss over `traj` into `grads`.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    traj: &Trajectory<T>,
    targets: &[f64],
    beta: f64,
    grads: &mut [T],
) -> Result<LossStats> {
    if targets.len() != traj.steps.len() {
        return Err(Error::contract("one return target per step"));
    }
    let beta_t = T::of(beta);
    let mut stats = LossStats::default();
    let mut heads = Vec::with_capacity(traj.steps.len());
    for (step, &ret) in traj.steps.iter().zip(targets) {
        let probs = step.fwd.policy();
        let logp = log_softmax(step.fwd.logits());
        let value = step.fwd.value();
        let h: T = -probs.iter().zip(&logp).map(|(&p, &lp)| p * lp).sum::<T>();
        let ret_t = T::of(ret);
        let adv = ret_t - value;

        let policy_loss = -adv * logp[step.action];
        let value_loss = adv * adv;
        let total = policy_loss - beta_t * h + value_loss;
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss (value {value:?}, return {ret})"
            )));
        }
        stats.policy_loss += policy_loss.as_f64();
        stats.value_loss += value_loss.as_f64();
        stats.entropy += h.as_f64();
        stats.total += total.as_f64();

        let dlogits: Vec<T> = probs
            .iter()
            .zip(&logp)
            .enumerate()
            .map(|(j, (&p, &lp))| {
                let onehot = if j == step.action { T::one() } else { T::zero() };
                adv * (p - onehot) + beta_t * p * (lp + h)
            })
            .collect();
        let dvalue = -(adv + adv);
        heads.push((dlogits, dvalue));
    }
    let items: Vec<_> = traj
        .steps
        .iter()
        .zip(&heads)
        .map(|(step, (dl, dv))| (&step.fwd, dl.as_slice(), *dv))
        .collect();
    backward_batch(params, &items, grads);
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(stats)
}
