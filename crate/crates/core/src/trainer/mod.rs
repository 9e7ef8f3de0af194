//! A3C training.
//!
//! Each actor-learner keeps its own copy of the parameters, rolls out at
//! most `t_max` steps of its current episode, turns the rollout into a
//! gradient, and hands it to the shared store (global-norm clip, then one
//! ADAM step with moments shared by all learners). It then refreshes its copy.
//!
//! Two schedules are available. The serial one advances all learners in
//! lockstep rounds on the calling thread, batching their network
//! evaluations, and is reproducible for a fixed seed. The asynchronous one
//! runs every learner on its own thread.

mod learner;
mod record;
mod optim;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::Demonstration;
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::net::{forward_batch, save_checkpoint, ModelParams, NetShape, Scalar};
use crate::oracle::Oracle;
use crate::token::TokenSeq;
use crate::vocab::Vocabulary;

use learner::Begin;
pub use learner::{run_demo_episode, sample_action, ActorLearnerState, EpisodeRecord};
pub use record::{LogRow, TrainLog};
pub use optim::{clip_global_norm, Adam, AdamConfig, Optimizer, Sgd, SharedStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub t_max: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub n_actor_learners: usize,
    pub grad_clip_norm: f64,
    pub demo_fraction: f64,
    pub epochs: usize,
    /// Stop after this many episodes even if epochs remain.
    pub max_episodes: Option<usize>,
    pub env: EnvConfig,
    pub seed: u64,
    pub precision: Precision,
    /// Lockstep learners on one thread (reproducible).
    pub serial: bool,
    pub adam: AdamConfig,
    /// Episodes per log row; 0 logs once per epoch.
    pub log_every: usize,
    /// Episodes between checkpoints; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            t_max: 24,
            beta: 0.01,
            learning_rate: 1e-4,
            n_actor_learners: 32,
            grad_clip_norm: 40.0,
            demo_fraction: 0.1,
            epochs: 10,
            max_episodes: None,
            env: EnvConfig::default(),
            seed: 0,
            precision: Precision::F32,
            serial: false,
            adam: AdamConfig::default(),
            log_every: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.t_max == 0 || self.n_actor_learners == 0 {
            return bad("t_max and n_actor_learners must be positive");
        }
        if !(0.0..=1.0).contains(&self.demo_fraction) {
            return bad("demo_fraction must lie in [0, 1]");
        }
        if !(self.grad_clip_norm > 0.0) || !(self.learning_rate > 0.0) || self.beta < 0.0 {
            return bad("grad_clip_norm and learning_rate must be positive, beta non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        self.env.rewards.validate()
    }
}

/// A training program with its corpus key.
#[derive(Debug, Clone)]
pub struct TrainProgram {
    pub id: String,
    pub program: TokenSeq,
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: TrainLog,
    pub updates: u64,
}

/// Hands out episodes: one shuffled pass over the programs per epoch.
struct EpisodeSource {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    epochs: usize,
    issued: usize,
    max_episodes: Option<usize>,
    rng: ChaCha8Rng,
}

impl EpisodeSource {
    fn new(n: usize, epochs: usize, max_episodes: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe915_0de5);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        EpisodeSource {
            order,
            pos: 0,
            epoch: 0,
            epochs,
            issued: 0,
            max_episodes,
            rng,
        }
    }

    /// `(program index, epoch)` of the next episode.
    fn next(&mut self) -> Option<(usize, usize)> {
        if self.max_episodes.is_some_and(|m| self.issued >= m) || self.order.is_empty() {
            return None;
        }
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.order.shuffle(&mut self.rng);
        }
        if self.epoch >= self.epochs {
            return None;
        }
        self.pos += 1;
        self.issued += 1;
        Some((self.order[self.pos - 1], self.epoch))
    }
}

/// Read-only state shared by all learners.
pub(crate) struct Context<'a, T, O> {
    pub cfg: &'a TrainConfig,
    pub env: Env<'a>,
    pub vocab: &'a Vocabulary,
    pub programs: &'a [TrainProgram],
    /// Demonstration for each program in the demo subset.
    pub demos: Vec<Option<Arc<Demonstration>>>,
    pub store: &'a SharedStore<T, O>,
    source: Mutex<EpisodeSource>,
}

impl<T, O> Context<'_, T, O> {
    pub fn next_episode(&self) -> Option<(usize, usize)> {
        self.source.lock().unwrap_or_else(|e| e.into_inner()).next()
    }
}

/// Picks the fixed subset of programs that are always run from their
/// demonstration: `round(demo_fraction · n)` of the programs that have one.
pub fn demo_subset(
    programs: &[TrainProgram],
    demos: &[Demonstration],
    demo_fraction: f64,
    seed: u64,
) -> Vec<Option<Arc<Demonstration>>> {
    let by_id: HashMap<&str, &Demonstration> =
        demos.iter().map(|d| (d.program_id.as_str(), d)).collect();
    let mut candidates: Vec<usize> = (0..programs.len())
        .filter(|&i| by_id.contains_key(programs[i].id.as_str()))
        .collect();
    let want = (demo_fraction * programs.len() as f64).round() as usize;
    if candidates.len() < want {
        log::warn!(
            "demo_fraction asks for {want} demonstrated programs, only {} have demonstrations",
            candidates.len()
        );
    }
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xde30));
    let mut out = vec![None; programs.len()];
    for &i in candidates.iter().take(want) {
        out[i] = Some(Arc::new(by_id[programs[i].id.as_str()].clone()));
    }
    out
}

/// Trains from `init` (or a fresh initialization) on `programs`.
pub fn train<T: Scalar>(
    programs: &[TrainProgram],
    demos: &[Demonstration],
    cfg: &TrainConfig,
    oracle: &Oracle,
    vocab: &Vocabulary,
    init: Option<ModelParams<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if programs.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let params = match init {
        Some(p) => {
            if p.shape().vocab != vocab.len() {
                return Err(Error::contract("initial parameters do not match the vocabulary"));
            }
            p
        }
        None => ModelParams::init(
            NetShape::paper(vocab.len()),
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        ),
    };
    let n_params = params.len();
    let store = SharedStore::new(
        params,
        Adam::new(n_params, cfg.learning_rate, cfg.adam),
        cfg.grad_clip_norm,
    );
    let ctx = Context {
        cfg,
        env: Env::new(oracle, cfg.env),
        vocab,
        programs,
        demos: demo_subset(programs, demos, cfg.demo_fraction, cfg.seed),
        store: &store,
        source: Mutex::new(EpisodeSource::new(
            programs.len(),
            cfg.epochs,
            cfg.max_episodes,
            cfg.seed,
        )),
    };
    log::info!(
        "training on {} programs ({} demonstrated), {} learners, {} epochs",
        programs.len(),
        ctx.demos.iter().filter(|d| d.is_some()).count(),
        cfg.n_actor_learners,
        cfg.epochs
    );

    let records = if cfg.serial || !cfg!(feature = "parallel") {
        run_serial(&ctx)
    } else {
        run_async(&ctx)
    };
    let records = match records {
        Ok(r) => r,
        Err(e) => {
            if matches!(e, Error::Numeric(_)) {
                if let Some(dir) = &cfg.checkpoint_dir {
                    let (snap, v) = store.snapshot();
                    let path = dir.join("halt.bin");
                    save_checkpoint(&snap, serde_json::json!({"halted_at_update": v}), &path)?;
                    log::error!("numeric failure; last good parameters in {}", path.display());
                }
            }
            return Err(e);
        }
    };
    let updates = store.version();
    Ok(TrainOutcome {
        params: store.into_params(),
        log: TrainLog::from_records(records, cfg.log_every),
        updates,
    })
}

/// Keeps track of finished episodes for logging and checkpoints.
struct Progress<'a> {
    cfg: &'a TrainConfig,
    /// Episodes per live log line.
    every: usize,
    records: Vec<EpisodeRecord>,
    window: Vec<EpisodeRecord>,
}

impl<'a> Progress<'a> {
    fn new(cfg: &'a TrainConfig, n_programs: usize) -> Self {
        Progress {
            cfg,
            every: if cfg.log_every > 0 { cfg.log_every } else { n_programs.max(1) },
            records: Vec::new(),
            window: Vec::new(),
        }
    }

    fn finish<T: Scalar, O>(&mut self, rec: EpisodeRecord, store: &SharedStore<T, O>) -> Result<()>
    where
        O: Optimizer<T>,
    {
        self.window.push(rec.clone());
        self.records.push(rec);
        if self.window.len() >= self.every {
            log::info!("{}", LogRow::summarize(&self.window, self.records.len()));
            self.window.clear();
        }
        let n = self.records.len();
        if self.cfg.checkpoint_every > 0 && n % self.cfg.checkpoint_every == 0 {
            if let Some(dir) = &self.cfg.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                let (snap, v) = store.snapshot();
                let meta = serde_json::json!({"episodes": n, "updates": v});
                save_checkpoint(&snap, meta.clone(), &dir.join(format!("episode-{n:08}.bin")))?;
                save_checkpoint(&snap, meta, &dir.join("latest.bin"))?;
            }
        }
        Ok(())
    }
}

/// Lockstep rounds on the calling thread. Every round, each learner rolls
/// out up to `t_max` steps against the same snapshot (the network evaluates
/// all learners' states as one batch), then the learners push their
/// gradients one after another. A learner's gradient is therefore at most
/// one round stale, much like a thread's under the asynchronous schedule.
fn run_serial<T: Scalar, O: Optimizer<T>>(ctx: &Context<'_, T, O>) -> Result<Vec<EpisodeRecord>> {
    let mut learners: Vec<ActorLearnerState<T>> = (0..ctx.cfg.n_actor_learners)
        .map(|i| ActorLearnerState::new(i, ctx.cfg.seed, ctx.store))
        .collect();
    let mut progress = Progress::new(ctx.cfg, ctx.programs.len());
    let mut exhausted = vec![false; learners.len()];
    loop {
        let mut live = Vec::with_capacity(learners.len());
        for (i, learner) in learners.iter_mut().enumerate() {
            while !exhausted[i] {
                match learner.begin(ctx)? {
                    Begin::Ready => {
                        live.push(i);
                        break;
                    }
                    Begin::Skipped => {}
                    Begin::Exhausted => exhausted[i] = true,
                }
            }
        }
        if live.is_empty() {
            break;
        }
        let (params, _) = ctx.store.snapshot();
        let mut running = live.clone();
        for _ in 0..ctx.cfg.t_max {
            if running.is_empty() {
                break;
            }
            let inputs = running
                .iter()
                .map(|&i| learners[i].observe(ctx.vocab))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
            let fwds = forward_batch(&params, &refs)?;
            let mut still = Vec::with_capacity(running.len());
            for (&i, fwd) in running.iter().zip(fwds) {
                if !learners[i].act(&ctx.env, fwd)? {
                    still.push(i);
                }
            }
            running = still;
        }
        let mut bootstrap = vec![0.0; learners.len()];
        if !running.is_empty() {
            let inputs = running
                .iter()
                .map(|&i| learners[i].observe(ctx.vocab))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
            for (&i, fwd) in running.iter().zip(forward_batch(&params, &refs)?) {
                bootstrap[i] = fwd.value().as_f64();
            }
        }
        for &i in &live {
            if let Some(rec) = learners[i].update(ctx, &params, bootstrap[i])? {
                progress.finish(rec, ctx.store)?;
            }
        }
    }
    Ok(progress.records)
}

#[cfg(feature = "parallel")]
fn run_async<T: Scalar, O: Optimizer<T>>(ctx: &Context<'_, T, O>) -> Result<Vec<EpisodeRecord>>
where
    O: Send,
{
    use std::sync::atomic::{AtomicBool, Ordering};

    let progress = Mutex::new(Progress::new(ctx.cfg, ctx.programs.len()));
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let stop = AtomicBool::new(false);
    std::thread::scope(|s| {
        for i in 0..ctx.cfg.n_actor_learners {
            let (progress, failure, stop) = (&progress, &failure, &stop);
            s.spawn(move || {
                let mut learner = ActorLearnerState::new(i, ctx.cfg.seed, ctx.store);
                let outcome = (|| -> Result<()> {
                    while !stop.load(Ordering::Relaxed) {
                        match learner.train_step(ctx)? {
                            None => break,
                            Some(Some(rec)) => progress
                                .lock()
                                .unwrap_or_else(|e| e.into_inner())
                                .finish(rec, ctx.store)?,
                            Some(None) => {}
                        }
                    }
                    Ok(())
                })();
                if let Err(e) = outcome {
                    stop.store(true, Ordering::Relaxed);
                    failure.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }
    Ok(progress.into_inner().unwrap_or_else(|e| e.into_inner()).records)
}

#[cfg(not(feature = "parallel"))]
fn run_async<T: Scalar, O: Optimizer<T>>(ctx: &Context<'_, T, O>) -> Result<Vec<EpisodeRecord>> {
    run_serial(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_covers_each_epoch() {
        let mut src = EpisodeSource::new(7, 3, None, 1);
        let mut seen = vec![vec![]; 3];
        while let Some((p, e)) = src.next() {
            seen[e].push(p);
        }
        for mut epoch in seen {
            epoch.sort();
            assert_eq!(epoch, (0..7).collect::<Vec<_>>());
        }
        let mut capped = EpisodeSource::new(7, 3, Some(10), 1);
        assert_eq!(std::iter::from_fn(|| capped.next()).count(), 10);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            demo_fraction: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let text = toml::to_string(&TrainConfig::default()).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, TrainConfig::default());
        assert!(toml::from_str::<TrainConfig>("gama = 0.9").is_err());
    }
}
