use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Context, Optimizer, SharedStore, TrainConfig};
use crate::demos::Demonstration;
use crate::env::{Action, Env, EpisodeTally, State, Termination};
use crate::error::{Error, Result};
use crate::net::{forward, loss_and_grads, ModelParams, Scalar, Step, Trajectory};
use crate::token::TokenSeq;
use crate::vocab::Vocabulary;

/// Outcome of one finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub program_id: String,
    pub epoch: usize,
    pub demo: bool,
    pub initial_errors: usize,
    pub final_errors: usize,
    pub reward: f64,
    pub termination: Termination,
    pub tally: EpisodeTally,
}

impl EpisodeRecord {
    pub fn resolved(&self) -> usize {
        self.initial_errors.saturating_sub(self.final_errors)
    }
}

struct Episode {
    program: usize,
    epoch: usize,
    state: State,
    demo: Option<(Arc<Demonstration>, usize)>,
    tally: EpisodeTally,
    reward: f64,
    initial_errors: usize,
}

/// Draws an action index from a policy distribution.
pub fn sample_action<T: Scalar>(probs: &[T], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Where the next action comes from.
enum Chooser<'a, R> {
    Sample(&'a mut R),
    Demo(&'a Demonstration, &'a mut usize),
}

/// Picks an action from `fwd`, applies it to `state` and records the step.
/// Returns whether the episode ended.
#[allow(clippy::too_many_arguments)]
fn take_step<T: Scalar, R: Rng>(
    fwd: crate::net::Forward<T>,
    env: &Env<'_>,
    state: &mut State,
    chooser: Chooser<'_, R>,
    tally: &mut EpisodeTally,
    reward: &mut f64,
    steps: &mut Vec<Step<T>>,
) -> Result<bool> {
    let action = match chooser {
        Chooser::Sample(rng) => Action::ALL[sample_action(fwd.policy(), rng)],
        Chooser::Demo(demo, pos) => {
            let a = *demo.actions.get(*pos).ok_or_else(|| {
                Error::DataCorruption(format!(
                    "demonstration for {} ends before the episode",
                    demo.program_id
                ))
            })?;
            *pos += 1;
            let res = env.step(state, a)?;
            if res.edit_accepted == Some(false) {
                return Err(Error::DataCorruption(format!(
                    "demonstrated {a} rejected at step {}",
                    state.steps_taken
                )));
            }
            tally.record(a, &res);
            *reward += res.reward;
            steps.push(Step {
                fwd,
                action: a.index(),
                reward: res.reward,
            });
            return Ok(res.done);
        }
    };
    let res = env.step(state, action)?;
    tally.record(action, &res);
    *reward += res.reward;
    steps.push(Step {
        fwd,
        action: action.index(),
        reward: res.reward,
    });
    Ok(res.done)
}

/// Runs up to `t_max` steps of `state`, returning the rollout.
#[allow(clippy::too_many_arguments)]
fn rollout<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    env: &Env<'_>,
    vocab: &Vocabulary,
    state: &mut State,
    t_max: usize,
    mut chooser: Chooser<'_, R>,
    tally: &mut EpisodeTally,
    reward: &mut f64,
) -> Result<Trajectory<T>> {
    let mut steps = Vec::with_capacity(t_max);
    for _ in 0..t_max {
        let ids = vocab.encode_state(&state.seq, state.cursor)?;
        let fwd = forward(params, &ids)?;
        let ch = match &mut chooser {
            Chooser::Sample(rng) => Chooser::Sample(&mut **rng),
            Chooser::Demo(demo, pos) => Chooser::Demo(demo, &mut **pos),
        };
        if take_step(fwd, env, state, ch, tally, reward, &mut steps)? {
            return Ok(Trajectory {
                steps,
                bootstrap: 0.0,
            });
        }
    }
    let ids = vocab.encode_state(&state.seq, state.cursor)?;
    let bootstrap = forward(params, &ids)?.value().as_f64();
    Ok(Trajectory { steps, bootstrap })
}

/// One actor-learner: a thread-local parameter snapshot plus the episode it
/// is working through.
pub struct ActorLearnerState<T> {
    pub id: usize,
    params: Arc<ModelParams<T>>,
    pub version: u64,
    rng: ChaCha8Rng,
    episode: Option<Episode>,
    /// Steps of the rollout in progress.
    pending: Vec<Step<T>>,
    pub local_steps: u64,
    grads: Vec<T>,
}

/// Result of trying to give a learner an episode to work on.
pub(crate) enum Begin {
    Ready,
    /// The drawn program was unusable and has been skipped.
    Skipped,
    Exhausted,
}

impl<T: Scalar> ActorLearnerState<T> {
    pub fn new<O: Optimizer<T>>(id: usize, seed: u64, store: &SharedStore<T, O>) -> Self {
        let (params, version) = store.snapshot();
        let grads = params.zeros_like();
        ActorLearnerState {
            id,
            params,
            version,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ id as u64),
            episode: None,
            pending: Vec::new(),
            local_steps: 0,
            grads,
        }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn refresh<O: Optimizer<T>>(&mut self, store: &SharedStore<T, O>) {
        let (params, version) = store.snapshot();
        self.params = params;
        self.version = version;
    }

    /// Makes sure an episode is in progress.
    pub(crate) fn begin<O: Optimizer<T>>(&mut self, ctx: &Context<'_, T, O>) -> Result<Begin> {
        if self.episode.is_some() {
            return Ok(Begin::Ready);
        }
        let Some((program, epoch)) = ctx.next_episode() else {
            return Ok(Begin::Exhausted);
        };
        let state = match ctx.env.reset(&ctx.programs[program].program) {
            Ok(s) => s,
            Err(Error::InvalidEpisode(why)) => {
                log::warn!("skipping {}: {why}", ctx.programs[program].id);
                return Ok(Begin::Skipped);
            }
            Err(e) => return Err(e),
        };
        self.episode = Some(Episode {
            program,
            epoch,
            initial_errors: state.error_count,
            state,
            demo: ctx.demos[program].clone().map(|d| (d, 0)),
            tally: EpisodeTally::default(),
            reward: 0.0,
        });
        Ok(Begin::Ready)
    }

    /// Network input for the current state.
    pub(crate) fn observe(&self, vocab: &Vocabulary) -> Result<Vec<u32>> {
        let ep = self.episode.as_ref().ok_or_else(|| Error::contract("no episode in progress"))?;
        vocab.encode_state(&ep.state.seq, ep.state.cursor)
    }

    /// Acts on the current state given the network's evaluation of it.
    /// Returns whether the episode ended.
    pub(crate) fn act(&mut self, env: &Env<'_>, fwd: crate::net::Forward<T>) -> Result<bool> {
        let ep = self.episode.as_mut().ok_or_else(|| Error::contract("no episode in progress"))?;
        let chooser = match &mut ep.demo {
            Some((demo, pos)) => Chooser::Demo(demo, pos),
            None => Chooser::Sample(&mut self.rng),
        };
        take_step(
            fwd,
            env,
            &mut ep.state,
            chooser,
            &mut ep.tally,
            &mut ep.reward,
            &mut self.pending,
        )
    }

    /// Turns the pending rollout into a gradient against `params`, pushes it
    /// to the shared store and, if the episode is over, reports it.
    pub(crate) fn update<O: Optimizer<T>>(
        &mut self,
        ctx: &Context<'_, T, O>,
        params: &ModelParams<T>,
        bootstrap: f64,
    ) -> Result<Option<EpisodeRecord>> {
        let cfg: &TrainConfig = ctx.cfg;
        let traj = Trajectory {
            steps: std::mem::take(&mut self.pending),
            bootstrap,
        };
        self.local_steps += traj.steps.len() as u64;
        let targets = traj.returns(cfg.gamma);
        self.grads.iter_mut().for_each(|g| *g = T::zero());
        loss_and_grads(params, &traj, &targets, cfg.beta, &mut self.grads)?;
        ctx.store.apply_update(&mut self.grads)?;
        (self.params, self.version) = ctx.store.snapshot();

        if !self.is_terminal() {
            return Ok(None);
        }
        let ep = self.episode.take().expect("episode in progress");
        Ok(Some(EpisodeRecord {
            program_id: ctx.programs[ep.program].id.clone(),
            epoch: ep.epoch,
            demo: ep.demo.is_some(),
            initial_errors: ep.initial_errors,
            final_errors: ep.state.error_count,
            reward: ep.reward,
            termination: ep.state.termination,
            tally: ep.tally,
        }))
    }

    fn is_terminal(&self) -> bool {
        self.episode.as_ref().is_some_and(|ep| ep.state.is_terminal())
    }

    /// One rollout against this learner's own snapshot and one shared
    /// update. `None` once the episode source is exhausted; `Some(Some(_))`
    /// when an episode finished during this call.
    pub(crate) fn train_step<O: Optimizer<T>>(
        &mut self,
        ctx: &Context<'_, T, O>,
    ) -> Result<Option<Option<EpisodeRecord>>> {
        match self.begin(ctx)? {
            Begin::Exhausted => return Ok(None),
            Begin::Skipped => return Ok(Some(None)),
            Begin::Ready => {}
        }
        let params = Arc::clone(&self.params);
        let mut done = false;
        for _ in 0..ctx.cfg.t_max {
            let fwd = forward(&params, &self.observe(ctx.vocab)?)?;
            if self.act(&ctx.env, fwd)? {
                done = true;
                break;
            }
        }
        let bootstrap = if done {
            0.0
        } else {
            forward(&params, &self.observe(ctx.vocab)?)?.value().as_f64()
        };
        self.update(ctx, &params, bootstrap).map(Some)
    }
}

/// Follows `demo` from the start of `program` with fixed parameters and
/// returns the gradient summed over all of its `t_max` rollouts, computed
/// exactly as if the demonstrated actions had been sampled.
pub fn run_demo_episode<T: Scalar>(
    params: &ModelParams<T>,
    env: &Env<'_>,
    vocab: &Vocabulary,
    program: &TokenSeq,
    demo: &Demonstration,
    cfg: &TrainConfig,
) -> Result<(Vec<T>, EpisodeTally, f64)> {
    let mut state = env.reset(program)?;
    let mut grads = params.zeros_like();
    let mut tally = EpisodeTally::default();
    let mut reward = 0.0;
    let mut pos = 0;
    while !state.is_terminal() {
        let traj = rollout::<T, ChaCha8Rng>(
            params,
            env,
            vocab,
            &mut state,
            cfg.t_max,
            Chooser::Demo(demo, &mut pos),
            &mut tally,
            &mut reward,
        )?;
        let targets = traj.returns(cfg.gamma);
        loss_and_grads(params, &traj, &targets, cfg.beta, &mut grads)?;
    }
    if state.termination != Termination::Goal {
        return Err(Error::DataCorruption(format!(
            "demonstration for {} ended without reaching the goal",
            demo.program_id
        )));
    }
    Ok((grads, tally, reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::generate_demonstration;
    use crate::env::EnvConfig;
    use crate::fixtures::{FIGURE_PROGRAM, FIGURE_PROGRAM_FIXED};
    use crate::net::NetShape;
    use crate::oracle::Oracle;
    use crate::token::lex;

    #[test]
    fn sampling_follows_distribution() {
        let probs = [0.1f64, 0.0, 0.6, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 4];
        for _ in 0..20000 {
            counts[sample_action(&probs, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[2] as f64 / 20000.0 - 0.6).abs() < 0.02);
    }

    #[test]
    fn demo_episode_on_figure_program() {
        let oracle = Oracle::surrogate();
        let env = Env::new(&oracle, EnvConfig::default());
        let vocab = Vocabulary::builtin();
        let p = lex(FIGURE_PROGRAM);
        let demo = generate_demonstration(&env, "fig", &p, &lex(FIGURE_PROGRAM_FIXED))
            .unwrap()
            .demo()
            .unwrap();
        let params: ModelParams<f64> =
            ModelParams::init(NetShape::paper(vocab.len()), &mut ChaCha8Rng::seed_from_u64(0));
        let cfg = TrainConfig::default();
        let (g, tally, reward) = run_demo_episode(&params, &env, &vocab, &p, &demo, &cfg).unwrap();
        assert!(tally.goal);
        assert!((reward - tally.closed_form_reward(&env.config().clone())).abs() < 1e-12);
        assert!(reward > 0.9);
        assert!(g.iter().any(|&x| x != 0.0));

        // the same actions fed through the generic rollout path give the
        // same gradient
        let mut state = env.reset(&p).unwrap();
        let mut again = params.zeros_like();
        let mut i = 0;
        let (mut t2, mut r2) = (EpisodeTally::default(), 0.0);
        while !state.is_terminal() {
            let copy = Demonstration {
                program_id: "copy".into(),
                actions: demo.actions.clone(),
                expected_final: demo.expected_final.clone(),
            };
            let traj = rollout::<f64, ChaCha8Rng>(
                &params,
                &env,
                &vocab,
                &mut state,
                cfg.t_max,
                Chooser::Demo(&copy, &mut i),
                &mut t2,
                &mut r2,
            )
            .unwrap();
            let targets = traj.returns(cfg.gamma);
            loss_and_grads(&params, &traj, &targets, cfg.beta, &mut again).unwrap();
        }
        assert_eq!(g, again);
    }
}
