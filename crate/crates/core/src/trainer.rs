//! REINFORCE with a learned baseline.
//!
//! Returns are makespan still to come, so lower is better. The objective
//! `J = -E[makespan]` has gradient estimate `-(1/B) sum A_t grad log pi(a_t)`
//! with advantage `A_t = G_t - b_t` held constant; the trainer ascends it by
//! minimizing the surrogate `(1/B) sum A_t log pi(a_t)`. The critic minimizes `(1/B) sum (v_t - G_t)^2`; both gradients come out of a
//! single reverse sweep per episode. Returns and values are measured in units
//! of the instance's lower bound so instances of different sizes share one
//! scale.

use std::io::Write;
use std::path::PathBuf;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{gap_percent, lower_bound, ScheduleState};
use crate::error::{Error, Result};
use crate::instance::{Instance, Time};
use crate::nncore::{adam_step, AdamConfig, ParamGrads, ParamStore, ParamVars, Tape, Tensor, Var};
use crate::policy::PolicyNet;
use crate::seeds;

const EPISODE_STREAM: u64 = 0x7e1a;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub critic_weight: f64,
    /// Global gradient-norm cap; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-4,
            iterations: 2000,
            eval_every: 100,
            seed: 0,
            critic_weight: 1.0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size and eval_every must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.critic_weight >= 0.0 && self.critic_weight.is_finite()) {
            return Err(Error::Config("critic_weight must be nonnegative".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One decision of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub state: ScheduleState,
    pub action: usize,
    pub log_prob: f64,
    pub reward: Time,
    /// Baseline in time units.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    /// Unit in which advantages and critic targets are expressed.
    pub scale: f64,
}

impl EpisodeTrace {
    pub fn rewards(&self) -> Vec<Time> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn makespan(&self) -> Time {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn returns(&self) -> Vec<f64> {
        returns(&self.rewards())
    }

    /// `(G_t - b_t) / scale` per step.
    pub fn advantages(&self) -> Vec<f64> {
        self.returns()
            .iter()
            .zip(&self.steps)
            .map(|(g, s)| (g - s.value) / self.scale)
            .collect()
    }
}

/// Undiscounted suffix sums `G_t = sum_{t' >= t} R_t'`.
pub fn returns(rewards: &[Time]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0u64;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc += u64::from(r);
        *o = acc as f64;
    }
    out
}

/// `(1/B) sum_episodes sum_t ((b_t - G_t) / scale)^2`.
pub fn critic_loss(traces: &[EpisodeTrace]) -> f64 {
    let total: f64 = traces
        .iter()
        .map(|t| {
            t.returns()
                .iter()
                .zip(&t.steps)
                .map(|(g, s)| ((s.value - g) / t.scale).powi(2))
                .sum::<f64>()
        })
        .sum();
    total / traces.len().max(1) as f64
}

/// An episode together with the tape it was recorded on.
pub struct RecordedEpisode<'a> {
    tape: Tape<'a, f32>,
    params: ParamVars,
    log_probs: Vec<Var>,
    values: Vec<Var>,
    pub trace: EpisodeTrace,
}

/// Records one episode, choosing actions with `choose(step, probabilities)`
/// where probabilities are over the listed legal jobs.
pub fn record_episode<'a>(
    net: &'a PolicyNet<f32>,
    inst: &Instance,
    mut choose: impl FnMut(usize, &[usize], &[f64]) -> Result<usize>,
) -> Result<RecordedEpisode<'a>> {
    let mut tape = Tape::new();
    let v = net.load(&mut tape)?;
    let hidden = net.encode_static(&mut tape, &v, inst)?;
    let scale = f64::from(lower_bound(inst).max(1));
    let mut state = ScheduleState::new(inst);
    let total = inst.n_operations();
    let (mut steps, mut log_probs, mut values) = (
        Vec::with_capacity(total),
        Vec::with_capacity(total),
        Vec::with_capacity(total),
    );
    while !state.is_terminal() {
        let out = net.step(&mut tape, &v, inst, &state, &hidden)?;
        let lp: Vec<f64> = tape
            .value(out.log_probs)
            .data()
            .iter()
            .map(|&x| f64::from(x))
            .collect();
        let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        let k = choose(state.step, &out.legal, &probs)?;
        if k >= out.legal.len() {
            return Err(Error::IllegalAction {
                job: k,
                reason: "choice outside the legal set",
            });
        }
        let value = f64::from(tape.value(out.value).item()) * scale;
        if !lp[k].is_finite() || !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "policy output at step {}",
                state.step
            )));
        }
        log_probs.push(tape.pick(out.log_probs, 0, k)?);
        values.push(out.value);
        let action = out.legal[k];
        let before = state.clone();
        let reward = state.dispatch(inst, action)?;
        steps.push(StepRecord {
            state: before,
            action,
            log_prob: lp[k],
            reward,
            value,
        });
    }
    Ok(RecordedEpisode {
        tape,
        params: v.params,
        log_probs,
        values,
        trace: EpisodeTrace { steps, scale },
    })
}

/// Records an episode with actions sampled from the policy.
pub fn sample_episode<'a>(
    net: &'a PolicyNet<f32>,
    inst: &Instance,
    seed: u64,
) -> Result<RecordedEpisode<'a>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    record_episode(net, inst, |_, _, probs| {
        let dist = WeightedIndex::new(probs)
            .map_err(|e| Error::NonFinite(format!("action distribution: {e}")))?;
        Ok(dist.sample(&mut rng))
    })
}

/// Records an episode that follows a fixed dispatch order.
pub fn replay_episode<'a>(
    net: &'a PolicyNet<f32>,
    inst: &Instance,
    actions: &[usize],
) -> Result<RecordedEpisode<'a>> {
    record_episode(net, inst, |step, legal, _| {
        let a = *actions
            .get(step)
            .ok_or_else(|| Error::Config("action sequence too short".into()))?;
        legal
            .iter()
            .position(|&j| j == a)
            .ok_or(Error::IllegalAction {
                job: a,
                reason: "job is finished",
            })
    })
}

impl RecordedEpisode<'_> {
    /// Descent gradient of this episode's share of
    /// `actor_weight * (1/B) sum A_t log pi(a_t) + critic_weight * critic loss`
    /// in a batch of `batch` episodes.
    pub fn gradients(
        &self,
        store: &ParamStore<f32>,
        batch: usize,
        actor_weight: f64,
        critic_weight: f64,
    ) -> Result<ParamGrads<f32>> {
        let b = batch as f64;
        let adv = self.trace.advantages();
        let ret = self.trace.returns();
        let mut seeds = Vec::with_capacity(2 * adv.len());
        for (t, a) in adv.iter().enumerate() {
            if actor_weight != 0.0 {
                seeds.push((
                    self.log_probs[t],
                    Tensor::scalar((actor_weight * a / b) as f32),
                ));
            }
            if critic_weight != 0.0 {
                let raw = self.trace.steps[t].value / self.trace.scale;
                let target = ret[t] / self.trace.scale;
                seeds.push((
                    self.values[t],
                    Tensor::scalar((critic_weight * 2.0 * (raw - target) / b) as f32),
                ));
            }
        }
        Ok(self.tape.backward(&seeds)?.params(&self.params, store))
    }
}

/// Policy-gradient estimate `-(1/B) sum_episodes sum_t A_t grad log pi(a_t)`
/// of the objective `-E[makespan]`; an ascent direction.
pub fn policy_gradient(
    episodes: &[RecordedEpisode<'_>],
    store: &ParamStore<f32>,
) -> Result<ParamGrads<f32>> {
    sum_gradients(episodes, store, -1.0, 0.0)
}

/// Gradient of [`critic_loss`] with respect to the parameters.
pub fn critic_gradient(
    episodes: &[RecordedEpisode<'_>],
    store: &ParamStore<f32>,
) -> Result<ParamGrads<f32>> {
    sum_gradients(episodes, store, 0.0, 1.0)
}

fn sum_gradients(
    episodes: &[RecordedEpisode<'_>],
    store: &ParamStore<f32>,
    actor: f64,
    critic: f64,
) -> Result<ParamGrads<f32>> {
    let mut total = ParamGrads::zeros_like(store);
    for ep in episodes {
        total.add_assign(&ep.gradients(store, episodes.len(), actor, critic)?);
    }
    Ok(total)
}

/// Instances for one iteration and the level they come from.
#[derive(Clone, Debug)]
pub struct LevelBatch {
    pub level: usize,
    pub instances: Vec<Instance>,
}

/// Supplies training data and observes progress.
pub trait Driver {
    /// Batch for iteration `iter`, or `None` to stop training.
    fn next_batch(
        &mut self,
        iter: usize,
        batch_size: usize,
        net: &PolicyNet<f32>,
    ) -> Result<Option<LevelBatch>>;

    /// Called after every `eval_every` completed iterations.
    fn evaluate(&mut self, _iter: usize, _net: &PolicyNet<f32>) -> Result<()> {
        Ok(())
    }
}

/// Fresh instances of one size every iteration.
pub struct RandomInstances {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl Driver for RandomInstances {
    fn next_batch(
        &mut self,
        iter: usize,
        batch_size: usize,
        _net: &PolicyNet<f32>,
    ) -> Result<Option<LevelBatch>> {
        let instances = (0..batch_size)
            .map(|k| {
                let s = seeds::derive(self.seed, iter as u64, k as u64);
                crate::instance::generate(self.n, self.m, s)
            })
            .collect();
        Ok(Some(LevelBatch {
            level: 0,
            instances,
        }))
    }
}

/// Cycles through a fixed set of instances.
pub struct FixedInstances {
    pub instances: Vec<Instance>,
}

impl Driver for FixedInstances {
    fn next_batch(
        &mut self,
        iter: usize,
        batch_size: usize,
        _net: &PolicyNet<f32>,
    ) -> Result<Option<LevelBatch>> {
        if self.instances.is_empty() {
            return Err(Error::Config("no training instances".into()));
        }
        let k = self.instances.len();
        let instances = (0..batch_size)
            .map(|j| self.instances[(iter * batch_size + j) % k].clone())
            .collect();
        Ok(Some(LevelBatch {
            level: 0,
            instances,
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub level: usize,
    pub mean_makespan: f64,
    /// Mean gap of the sampled makespans to each instance's lower bound.
    pub mean_gap: f64,
    pub critic_loss: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iteration,level,mean_makespan,mean_gap,critic_loss\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.6}\n",
            r.iteration, r.level, r.mean_makespan, r.mean_gap, r.critic_loss
        ));
    }
    out
}

pub struct TrainOutcome {
    pub net: PolicyNet<f32>,
    pub metrics: Vec<MetricsRow>,
}

/// One optimization step on `instances`; returns the metrics row.
pub fn train_step(
    net: &mut PolicyNet<f32>,
    cfg: &TrainConfig,
    iteration: usize,
    batch: &LevelBatch,
) -> Result<MetricsRow> {
    let b = batch.instances.len();
    if b == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let results: Vec<(ParamGrads<f32>, EpisodeTrace)> = {
        let frozen = &*net;
        batch
            .instances
            .par_iter()
            .enumerate()
            .map(|(k, inst)| {
                let seed = seeds::derive(cfg.seed ^ EPISODE_STREAM, iteration as u64, k as u64);
                let ep = sample_episode(frozen, inst, seed)?;
                let g = ep.gradients(frozen.params(), b, 1.0, cfg.critic_weight)?;
                Ok((g, ep.trace))
            })
            .collect::<Result<_>>()?
    };
    let mut grads = ParamGrads::zeros_like(net.params());
    let mut traces = Vec::with_capacity(b);
    for (g, t) in results {
        grads.add_assign(&g);
        traces.push(t);
    }
    if let Some(c) = cfg.clip_norm {
        grads.clip_global_norm(c as f32);
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    adam_step(net.params_mut(), &grads, &adam)?;
    let makespans: Vec<f64> = traces.iter().map(|t| f64::from(t.makespan())).collect();
    let gaps: Vec<f64> = batch
        .instances
        .iter()
        .zip(&traces)
        .map(|(inst, t)| gap_percent(t.makespan(), lower_bound(inst).max(1)))
        .collect();
    Ok(MetricsRow {
        iteration,
        level: batch.level,
        mean_makespan: makespans.iter().sum::<f64>() / b as f64,
        mean_gap: gaps.iter().sum::<f64>() / b as f64,
        critic_loss: critic_loss(&traces),
    })
}

/// Runs up to `cfg.iterations` iterations or until the driver stops.
/// With a checkpoint path the parameters are saved every `eval_every`
/// iterations, at the end, and before returning a numeric error.
pub fn train(
    mut net: PolicyNet<f32>,
    cfg: &TrainConfig,
    driver: &mut dyn Driver,
    checkpoint: Option<PathBuf>,
    mut metrics_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let save = |net: &PolicyNet<f32>| -> Result<()> {
        match &checkpoint {
            Some(p) => net.to_checkpoint().save(p),
            None => Ok(()),
        }
    };
    if let Some(w) = metrics_sink.as_deref_mut() {
        w.write_all(metrics_csv(&[]).as_bytes())?;
    }
    let mut metrics = Vec::new();
    for iter in 0..cfg.iterations {
        let Some(batch) = driver.next_batch(iter, cfg.batch_size, &net)? else {
            break;
        };
        let row = match train_step(&mut net, cfg, iter, &batch) {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                save(&net)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(w) = metrics_sink.as_deref_mut() {
            let line = metrics_csv(std::slice::from_ref(&row));
            w.write_all(
                line.split_once('\n')
                    .map_or("", |(_, rest)| rest)
                    .as_bytes(),
            )?;
        }
        metrics.push(row);
        if (iter + 1) % cfg.eval_every == 0 {
            driver.evaluate(iter + 1, &net)?;
            save(&net)?;
        }
    }
    save(&net)?;
    Ok(TrainOutcome { net, metrics })
}
