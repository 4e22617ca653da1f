//! Decoding strategies over any per-state action distribution.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{replay, rollout, Rollout, ScheduleState};
use crate::error::{Error, Result};
use crate::instance::{Instance, Time};
use crate::nncore::Scalar;
use crate::pdr::{self, PdrKind};
use crate::policy::BoundNet;
use crate::seeds;

const SAMPLE_STREAM: u64 = 0x5a3f;

/// A stochastic policy on one instance.
pub trait ActionPolicy: Sync {
    fn instance(&self) -> &Instance;

    /// One probability per job; finished jobs get zero.
    fn action_probs(&self, state: &ScheduleState) -> Result<Vec<f64>>;
}

impl<S: Scalar> ActionPolicy for BoundNet<'_, S> {
    fn instance(&self) -> &Instance {
        BoundNet::instance(self)
    }

    fn action_probs(&self, state: &ScheduleState) -> Result<Vec<f64>> {
        Ok(self.output(state)?.probs)
    }
}

/// A deterministic dispatch rule as a one-hot distribution.
pub struct RulePolicy<'a> {
    kind: PdrKind,
    inst: &'a Instance,
}

impl<'a> RulePolicy<'a> {
    pub fn new(kind: PdrKind, inst: &'a Instance) -> Self {
        Self { kind, inst }
    }
}

impl ActionPolicy for RulePolicy<'_> {
    fn instance(&self) -> &Instance {
        self.inst
    }

    fn action_probs(&self, state: &ScheduleState) -> Result<Vec<f64>> {
        let job = pdr::select(self.kind, state, self.inst)?;
        let mut p = vec![0.0; state.n_jobs()];
        p[job] = 1.0;
        Ok(p)
    }
}

/// Uniform over unfinished jobs.
pub struct UniformPolicy<'a> {
    inst: &'a Instance,
}

impl<'a> UniformPolicy<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        Self { inst }
    }
}

impl ActionPolicy for UniformPolicy<'_> {
    fn instance(&self) -> &Instance {
        self.inst
    }

    fn action_probs(&self, state: &ScheduleState) -> Result<Vec<f64>> {
        let legal = state.legal_actions();
        if legal.is_empty() {
            return Err(Error::Terminal);
        }
        let mut p = vec![0.0; state.n_jobs()];
        for &j in &legal {
            p[j] = 1.0 / legal.len() as f64;
        }
        Ok(p)
    }
}

/// Legal jobs ordered by decreasing probability, ties by job index.
fn ranked_actions(state: &ScheduleState, probs: &[f64]) -> Vec<usize> {
    let mut legal = state.legal_actions();
    legal.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    legal
}

fn argmax(state: &ScheduleState, probs: &[f64]) -> Result<usize> {
    ranked_actions(state, probs)
        .first()
        .copied()
        .ok_or(Error::Terminal)
}

fn greedy_from(
    policy: &dyn ActionPolicy,
    mut state: ScheduleState,
    mut actions: Vec<usize>,
) -> Result<Rollout> {
    let inst = policy.instance();
    while !state.is_terminal() {
        let a = argmax(&state, &policy.action_probs(&state)?)?;
        state.dispatch(inst, a)?;
        actions.push(a);
    }
    replay(inst, &actions)
}

/// Most probable action at every step.
pub fn decode_greedy(policy: &dyn ActionPolicy) -> Result<Rollout> {
    greedy_from(policy, ScheduleState::new(policy.instance()), Vec::new())
}

#[derive(Clone, Debug)]
pub struct Samples {
    /// Shortest sampled schedule; the earliest sample wins ties.
    pub best: Rollout,
    /// Makespan of every sample in order.
    pub makespans: Vec<Time>,
}

/// One episode with actions drawn from the policy; sample `index` under
/// `seed` always draws the same stream, so sets of samples are nested.
pub fn sample_episode(policy: &dyn ActionPolicy, seed: u64, index: u64) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, SAMPLE_STREAM, index));
    rollout(policy.instance(), |state, _| {
        let probs = policy.action_probs(state)?;
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::NonFinite(format!("action distribution: {e}")))?;
        Ok(dist.sample(&mut rng))
    })
}

/// Best of `n_samples` sampled episodes.
pub fn decode_sampling(policy: &dyn ActionPolicy, n_samples: usize, seed: u64) -> Result<Samples> {
    if n_samples == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let runs: Vec<Rollout> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| sample_episode(policy, seed, i))
        .collect::<Result<_>>()?;
    let makespans: Vec<Time> = runs.iter().map(|r| r.makespan).collect();
    let best_idx = (0..runs.len())
        .min_by_key(|&i| (makespans[i], i))
        .expect("nonempty");
    Ok(Samples {
        best: runs.into_iter().nth(best_idx).expect("index in range"),
        makespans,
    })
}

/// Branches on the `width` most probable first actions (at most the number
/// of jobs), continues each greedily and keeps the shortest; ties go to the
/// more probable first action.
pub fn decode_pomo(policy: &dyn ActionPolicy, width: usize) -> Result<Rollout> {
    if width == 0 {
        return Err(Error::Config("POMO width must be at least 1".into()));
    }
    let inst = policy.instance();
    let start = ScheduleState::new(inst);
    let firsts: Vec<usize> = ranked_actions(&start, &policy.action_probs(&start)?)
        .into_iter()
        .take(width)
        .collect();
    let runs: Vec<Rollout> = firsts
        .par_iter()
        .map(|&a| {
            let mut s = start.clone();
            s.dispatch(inst, a)?;
            greedy_from(policy, s, vec![a])
        })
        .collect::<Result<_>>()?;
    Ok(runs
        .into_iter()
        .enumerate()
        .min_by_key(|(i, r)| (r.makespan, *i))
        .expect("at least one action")
        .1)
}

struct Beam {
    state: ScheduleState,
    actions: Vec<usize>,
    log_prob: f64,
}

struct Candidate {
    parent: usize,
    action: usize,
    step_prob: f64,
    log_prob: f64,
}

/// Keeps the `k` partial schedules of highest cumulative log-probability,
/// extending every survivor by each of its legal actions; returns the
/// shortest completed survivor. Ties rank by parent position, then step
/// probability, then action index.
pub fn decode_beam(policy: &dyn ActionPolicy, k: usize) -> Result<Rollout> {
    if k == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let inst = policy.instance();
    let mut beams = vec![Beam {
        state: ScheduleState::new(inst),
        actions: Vec::new(),
        log_prob: 0.0,
    }];
    for _ in 0..inst.n_operations() {
        let probs: Vec<Vec<f64>> = beams
            .par_iter()
            .map(|b| policy.action_probs(&b.state))
            .collect::<Result<_>>()?;
        let mut cands = Vec::new();
        for (parent, (b, p)) in beams.iter().zip(&probs).enumerate() {
            for action in b.state.legal_actions() {
                let step_prob = p[action];
                cands.push(Candidate {
                    parent,
                    action,
                    step_prob,
                    log_prob: b.log_prob + step_prob.ln(),
                });
            }
        }
        cands.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then(a.parent.cmp(&b.parent))
                .then(b.step_prob.total_cmp(&a.step_prob))
                .then(a.action.cmp(&b.action))
        });
        cands.truncate(k);
        beams = cands
            .into_iter()
            .map(|c| {
                let parent = &beams[c.parent];
                let mut state = parent.state.clone();
                state.dispatch(inst, c.action)?;
                let mut actions = parent.actions.clone();
                actions.push(c.action);
                Ok(Beam {
                    state,
                    actions,
                    log_prob: c.log_prob,
                })
            })
            .collect::<Result<_>>()?;
    }
    let best = beams
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.state
                .partial_makespan
                .cmp(&b.state.partial_makespan)
                .then(i.cmp(j))
        })
        .map(|(_, b)| b)
        .ok_or(Error::Terminal)?;
    replay(inst, &best.actions)
}

/// A decoding strategy by its command-line name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Sample(usize),
    Pomo(usize),
    Beam(usize),
}

impl Strategy {
    pub fn decode(self, policy: &dyn ActionPolicy, seed: u64) -> Result<Rollout> {
        match self {
            Strategy::Greedy => decode_greedy(policy),
            Strategy::Sample(n) => Ok(decode_sampling(policy, n, seed)?.best),
            Strategy::Pomo(w) => decode_pomo(policy, w),
            Strategy::Beam(k) => decode_beam(policy, k),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Greedy => f.write_str("greedy"),
            Strategy::Sample(n) => write!(f, "sample:{n}"),
            Strategy::Pomo(w) => write!(f, "pomo:{w}"),
            Strategy::Beam(k) => write!(f, "beam:{k}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "greedy" {
            return Ok(Strategy::Greedy);
        }
        let bad = || {
            Error::Config(format!(
                "unknown strategy `{s}` (expected greedy, sample:N, pomo:W or beam:K)"
            ))
        };
        let (name, arg) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = arg.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match name {
            "sample" => Ok(Strategy::Sample(n)),
            "pomo" => Ok(Strategy::Pomo(n)),
            "beam" => Ok(Strategy::Beam(n)),
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::validate;
    use crate::instance::{generate, parse_standard};
    use crate::oracle::solve_exact;

    fn example() -> Instance {
        parse_standard("2 2\n0 3 1 2\n1 2 0 4\n").unwrap()
    }

    #[test]
    fn uniform_greedy_breaks_ties_low() {
        let inst = parse_standard("2 1\n0 4\n0 4\n").unwrap();
        let r = decode_greedy(&UniformPolicy::new(&inst)).unwrap();
        assert_eq!(r.actions[0], 0);
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..5 {
            let inst = generate(4, 4, seed);
            let p = RulePolicy::new(PdrKind::Mwkr, &inst);
            assert_eq!(decode_beam(&p, 1).unwrap(), decode_greedy(&p).unwrap());
        }
    }

    #[test]
    fn wide_beam_is_exhaustive() {
        let inst = example();
        let r = decode_beam(&UniformPolicy::new(&inst), 8).unwrap();
        assert_eq!(r.makespan, 7);
        assert_eq!(r.makespan, solve_exact(&inst, 1000).unwrap().makespan);
        // Even a one-hot policy explores zero-probability branches.
        let r = decode_beam(&RulePolicy::new(PdrKind::Spt, &inst), 8).unwrap();
        assert_eq!(r.makespan, 7);
    }

    #[test]
    fn pomo_dominates_greedy() {
        for seed in 0..10 {
            let inst = generate(5, 4, seed);
            let p = UniformPolicy::new(&inst);
            let g = decode_greedy(&p).unwrap();
            assert_eq!(decode_pomo(&p, 1).unwrap(), g);
            let r = decode_pomo(&p, 3).unwrap();
            assert!(r.makespan <= g.makespan);
            assert!(validate(&r.schedule, &inst).is_ok());
            assert_eq!(
                decode_pomo(&p, 50).unwrap().makespan,
                decode_pomo(&p, 5).unwrap().makespan
            );
        }
    }

    #[test]
    fn sampling_is_reproducible_and_nested() {
        let inst = generate(4, 4, 3);
        let p = UniformPolicy::new(&inst);
        let a = decode_sampling(&p, 8, 11).unwrap();
        let b = decode_sampling(&p, 8, 11).unwrap();
        assert_eq!(a.makespans, b.makespans);
        assert!(a.makespans.iter().all(|&m| a.best.makespan <= m));
        let small = decode_sampling(&p, 3, 11).unwrap();
        assert_eq!(&a.makespans[..3], &small.makespans[..]);
    }

    #[test]
    fn one_hot_sampling_equals_greedy() {
        let inst = generate(4, 3, 8);
        let p = RulePolicy::new(PdrKind::Spt, &inst);
        let g = decode_greedy(&p).unwrap();
        let s = decode_sampling(&p, 5, 0).unwrap();
        assert!(s.makespans.iter().all(|&m| m == g.makespan));
        assert_eq!(s.best, g);
    }

    #[test]
    fn strategy_names() {
        for s in ["greedy", "sample:128", "pomo:3", "beam:2"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        for s in ["sample", "beam:0", "pomo:x", "best:3"] {
            assert!(s.parse::<Strategy>().is_err());
        }
    }
}
