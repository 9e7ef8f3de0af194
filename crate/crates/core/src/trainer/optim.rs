//! Optimizers, gradient clipping, and the shared parameter store.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ModelParams, Scalar};

/// Rescales `grads` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| {
            let g = g.as_f64();
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

pub trait Optimizer<T>: Send {
    /// Updates `params` in place from `grads`.
    fn step(&mut self, params: &mut [T], grads: &[T]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// ADAM with one set of moment estimates shared by every learner.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            lr,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let one = T::one();
        // bias corrections folded into the step size
        let t = self.t as i32;
        let lr_t = self.lr * (1.0 - self.cfg.beta2.powi(t)).sqrt() / (1.0 - self.cfg.beta1.powi(t));
        let lr_t = T::of(lr_t);
        let eps = T::of(self.cfg.epsilon);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + eps);
        }
    }
}

/// Plain gradient descent. Updates commute, which makes it a convenient
/// probe for the store's atomicity.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl<T: Scalar> Optimizer<T> for Sgd {
    fn step(&mut self, params: &mut [T], grads: &[T]) {
        let lr = T::of(self.lr);
        for (p, &g) in params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }
}

/// The shared model. Readers take whole snapshots; each update is applied
/// under a single lock and published by swapping the snapshot.
pub struct SharedStore<T, O> {
    current: RwLock<Arc<ModelParams<T>>>,
    optimizer: Mutex<O>,
    version: AtomicU64,
    clip: f64,
}

impl<T: Scalar, O: Optimizer<T>> SharedStore<T, O> {
    pub fn new(params: ModelParams<T>, optimizer: O, clip: f64) -> Self {
        SharedStore {
            current: RwLock::new(Arc::new(params)),
            optimizer: Mutex::new(optimizer),
            version: AtomicU64::new(0),
            clip,
        }
    }

    pub fn snapshot(&self) -> (Arc<ModelParams<T>>, u64) {
        let guard = self.current.read().unwrap_or_else(|e| e.into_inner());
        (Arc::clone(&guard), self.version.load(Ordering::Acquire))
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }

    /// Clips `grads` by global norm and applies one optimizer step. Returns
    /// the new version and the pre-clip gradient norm.
    pub fn apply_update(&self, grads: &mut [T]) -> Result<(u64, f64)> {
        let mut opt = self.optimizer.lock().unwrap_or_else(|e| e.into_inner());
        let norm = clip_global_norm(grads, self.clip);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm {norm}")));
        }
        let mut next = ModelParams::clone(&self.snapshot().0);
        opt.step(next.as_mut_slice(), grads);
        if !next.all_finite() {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        *guard = Arc::new(next);
        let v = self.version.fetch_add(1, Ordering::AcqRel) + 1;
        Ok((v, norm))
    }

    pub fn into_params(self) -> ModelParams<T> {
        let arc = self.current.into_inner().unwrap_or_else(|e| e.into_inner());
        Arc::try_unwrap(arc).unwrap_or_else(|a| (*a).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> NetShape {
        NetShape {
            vocab: 5,
            embed: 2,
            hidden: 3,
            actions: 4,
        }
    }

    #[test]
    fn clip_to_norm() {
        let mut g: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = 10.0 * 40.0 / norm;
        g.iter_mut().for_each(|x| *x *= scale);
        let before = clip_global_norm(&mut g, 40.0);
        assert!((before - 400.0).abs() < 1e-9);
        let after: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((after - 40.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let p: ModelParams<f64> = ModelParams::init(shape(), &mut ChaCha8Rng::seed_from_u64(0));
        let store = SharedStore::new(p.clone(), Adam::new(p.len(), 1e-4, AdamConfig::default()), 40.0);
        let mut g = p.zeros_like();
        store.apply_update(&mut g).unwrap();
        assert_eq!(*store.snapshot().0, p);
        assert_eq!(store.version(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![1.0f64, -1.0];
        let mut adam = Adam::new(2, 0.1, AdamConfig::default());
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn concurrent_updates_serialize() {
        let p: ModelParams<f64> = ModelParams::init(shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let n = p.len();
        let store = SharedStore::new(p.clone(), Sgd { lr: 1.0 }, f64::INFINITY);
        let grads: Vec<Vec<f64>> = (0..4)
            .map(|k| (0..n).map(|i| ((i * 7 + k * 13) % 11) as f64 * 0.25).collect())
            .collect();
        std::thread::scope(|s| {
            for g in &grads {
                let store = &store;
                s.spawn(move || {
                    for _ in 0..25 {
                        let mut g = g.clone();
                        store.apply_update(&mut g).unwrap();
                    }
                });
            }
        });
        assert_eq!(store.version(), 100);
        let fin = store.into_params();
        for i in 0..n {
            let want = p.as_slice()[i] - 25.0 * grads.iter().map(|g| g[i]).sum::<f64>();
            assert!((fin.as_slice()[i] - want).abs() < 1e-9);
        }
    }
}
