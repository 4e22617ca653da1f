//! Level selection over a ladder of problem sizes.
//!
//! * ICL trains a fixed budget of iterations per level, in order.
//! * UCL draws a level uniformly every iteration.
//! * ASCL advances the frontier when its gap is at most `t_opt` and steps
//!   back one level after `patience` iterations without an advance.
//! * RASCL does the same, and while the frontier gap stays above `t_opt`
//!   it resamples the training level every `b` iterations among the levels
//!   up to the frontier, with probability proportional to their gaps.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::gap_percent;
use crate::error::{Error, Result};
use crate::inference::decode_greedy;
use crate::instance::{generate, Instance, Time};
use crate::oracle::{solve_exact, OracleError};
use crate::pdr::best_of_rules;
use crate::policy::PolicyNet;
use crate::seeds;
use crate::trainer::{Driver, LevelBatch};

const UCL_STREAM: u64 = 0x0c1;
const RASCL_STREAM: u64 = 0x4a5c;
const TRAIN_STREAM: u64 = 0x7a1;
const TEST_STREAM: u64 = 0x7e57;
/// Levels with at most this many operations use the exact oracle as reference.
pub const ORACLE_MAX_OPS: usize = 12;
const ORACLE_BUDGET: u64 = 5_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurriculumKind {
    Icl,
    Ucl,
    Ascl,
    Rascl,
}

impl CurriculumKind {
    pub const ALL: [CurriculumKind; 4] = [Self::Icl, Self::Ucl, Self::Ascl, Self::Rascl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Icl => "icl",
            Self::Ucl => "ucl",
            Self::Ascl => "ascl",
            Self::Rascl => "rascl",
        }
    }
}

impl fmt::Display for CurriculumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurriculumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown curriculum `{s}` (expected icl, ucl, ascl or rascl)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumParams {
    /// Period of the threshold check.
    pub u: usize,
    /// Period of gap-proportional resampling.
    pub b: usize,
    /// Gap threshold in percent.
    pub t_opt: f64,
    /// Iterations without an advance before stepping back.
    pub patience: usize,
    /// ICL iterations per level.
    pub icl_budget: usize,
}

impl Default for CurriculumParams {
    fn default() -> Self {
        Self {
            u: 100,
            b: 100,
            t_opt: 10.0,
            patience: 3000,
            icl_budget: 500,
        }
    }
}

impl CurriculumParams {
    pub fn validate(&self) -> Result<()> {
        if self.u == 0 || self.b == 0 || self.patience == 0 || self.icl_budget == 0 {
            return Err(Error::Config(
                "u, b, patience and the ICL budget must be at least 1".into(),
            ));
        }
        if !(self.t_opt >= 0.0) {
            return Err(Error::Config("t_opt must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelEvent {
    Advance,
    Stay,
    Back,
    Sample,
    Terminate,
}

impl LevelEvent {
    pub fn name(self) -> &'static str {
        match self {
            Self::Advance => "advance",
            Self::Stay => "stay",
            Self::Back => "back",
            Self::Sample => "sample",
            Self::Terminate => "terminate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    /// Frontier level `l`.
    pub level: usize,
    /// Level the next batch is drawn from.
    pub train_level: usize,
    /// Latest gap per level, in percent.
    pub gaps: Vec<f64>,
    pub iter: usize,
    pub last_advance_iter: usize,
    pub params: CurriculumParams,
    pub finished: bool,
}

impl CurriculumState {
    pub fn new(n_levels: usize, params: CurriculumParams) -> Self {
        assert!(n_levels >= 1, "ladder must have at least one level");
        Self {
            level: 0,
            train_level: 0,
            gaps: vec![0.0; n_levels],
            iter: 0,
            last_advance_iter: 0,
            params,
            finished: false,
        }
    }

    pub fn max_level(&self) -> usize {
        self.gaps.len() - 1
    }

    fn is_check(&self) -> bool {
        self.iter > 0 && self.iter % self.params.u == 0
    }
}

/// Level at `iter` under ICL, or `None` once every level's budget is spent.
pub fn next_level_icl(iter: usize, budget: usize, n_levels: usize) -> Option<usize> {
    let level = iter / budget.max(1);
    (level < n_levels).then_some(level)
}

/// Uniform level under UCL.
pub fn next_level_ucl<R: Rng>(n_levels: usize, rng: &mut R) -> usize {
    rng.gen_range(0..n_levels)
}

/// Probabilities `g[l'] / sum_{l'' <= level} g[l'']` over levels `0..=level`.
pub fn rascl_probabilities(gaps: &[f64], level: usize) -> Result<Vec<f64>> {
    let visited = &gaps[..=level];
    let total: f64 = visited.iter().sum();
    if !(total > 0.0) || visited.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::Config(format!(
            "cannot sample from gaps {visited:?}"
        )));
    }
    Ok(visited.iter().map(|g| g / total).collect())
}

/// Threshold and patience rule shared by ASCL and RASCL, applied at check
/// iterations. With `terminate` the frontier's closed gap at the top level
/// ends training; otherwise the frontier stays capped there.
fn threshold_rule(s: &mut CurriculumState, terminate: bool) -> Option<LevelEvent> {
    if !s.is_check() {
        return None;
    }
    let p = s.params;
    if s.gaps[s.level] <= p.t_opt {
        if s.level == s.max_level() {
            if terminate {
                s.finished = true;
                return Some(LevelEvent::Terminate);
            }
            s.train_level = s.level;
            return Some(LevelEvent::Stay);
        }
        s.level += 1;
        s.train_level = s.level;
        s.last_advance_iter = s.iter;
        return Some(LevelEvent::Advance);
    }
    if s.iter - s.last_advance_iter >= p.patience {
        s.level = s.level.saturating_sub(1);
        s.train_level = s.level;
        s.last_advance_iter = s.iter;
        return Some(LevelEvent::Back);
    }
    Some(LevelEvent::Stay)
}

/// ASCL step at `s.iter`; returns the event at check iterations.
pub fn next_level_ascl(s: &mut CurriculumState) -> Option<LevelEvent> {
    threshold_rule(s, false)
}

/// RASCL step at `s.iter`; returns the event at check or resampling iterations.
pub fn next_level_rascl<R: Rng>(
    s: &mut CurriculumState,
    rng: &mut R,
) -> Result<Option<LevelEvent>> {
    let event = threshold_rule(s, true);
    if matches!(
        event,
        Some(LevelEvent::Advance | LevelEvent::Back | LevelEvent::Terminate)
    ) {
        return Ok(event);
    }
    if s.iter > 0 && s.iter % s.params.b == 0 && s.gaps[s.level] > s.params.t_opt {
        let probs = rascl_probabilities(&s.gaps, s.level)?;
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::Config(e.to_string()))?;
        s.train_level = dist.sample(rng);
        return Ok(Some(LevelEvent::Sample));
    }
    Ok(event)
}

/// Frozen evaluation instances of one size with their reference makespans.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub n: usize,
    pub m: usize,
    pub instances: Vec<Instance>,
    pub references: Vec<Time>,
    /// Whether the references are exact optima.
    pub exact: bool,
}

impl TestSet {
    /// `count` generated instances. References are oracle optima when the
    /// size has at most [`ORACLE_MAX_OPS`] operations and the best of the four
    /// dispatch rules otherwise.
    pub fn generate(n: usize, m: usize, count: usize, seed: u64) -> Result<Self> {
        let instances: Vec<Instance> = (0..count)
            .map(|k| {
                generate(
                    n,
                    m,
                    seeds::derive(seed, TEST_STREAM ^ ((n * 1000 + m) as u64), k as u64),
                )
            })
            .collect();
        let exact = n * m <= ORACLE_MAX_OPS;
        let references = instances
            .par_iter()
            .map(|inst| {
                if exact {
                    match solve_exact(inst, ORACLE_BUDGET) {
                        Ok(sol) => Ok(sol.makespan),
                        Err(OracleError::BudgetExceeded { .. }) => Err(Error::Config(format!(
                            "oracle budget exceeded on {}",
                            inst.name
                        ))),
                        Err(OracleError::Invalid(msg)) => Err(Error::InvalidInstance(msg)),
                    }
                } else {
                    Ok(best_of_rules(inst)?.1.makespan)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            m,
            instances,
            references,
            exact,
        })
    }

    /// Mean gap of `makespans` to the references, in percent.
    pub fn mean_gap_of(&self, makespans: &[Time]) -> f64 {
        let total: f64 = makespans
            .iter()
            .zip(&self.references)
            .map(|(&c, &r)| gap_percent(c, r))
            .sum();
        total / self.references.len().max(1) as f64
    }

    pub fn greedy_makespans(&self, net: &PolicyNet<f32>) -> Result<Vec<Time>> {
        self.instances
            .par_iter()
            .map(|inst| Ok(decode_greedy(&net.bind(inst)?)?.makespan))
            .collect()
    }

    /// Mean greedy gap, which may be negative against a heuristic reference.
    pub fn greedy_gap(&self, net: &PolicyNet<f32>) -> Result<f64> {
        Ok(self.mean_gap_of(&self.greedy_makespans(net)?))
    }
}

/// Ordered levels, easiest first.
#[derive(Clone, Debug)]
pub struct Ladder {
    pub levels: Vec<TestSet>,
}

pub const DESK_LADDER: [(usize, usize); 4] = [(3, 3), (4, 4), (6, 6), (8, 8)];
pub const BENCHMARK_LADDER: [(usize, usize); 5] =
    [(15, 15), (20, 15), (20, 20), (30, 15), (30, 20)];

/// Parses `desk`, `benchmark`, or a comma-separated list like `3x3,4x4,6x6`.
pub fn parse_ladder(spec: &str) -> Result<Vec<(usize, usize)>> {
    match spec.trim() {
        "desk" => return Ok(DESK_LADDER.to_vec()),
        "benchmark" => return Ok(BENCHMARK_LADDER.to_vec()),
        _ => {}
    }
    let sizes = spec
        .split(',')
        .map(|part| {
            let bad = || Error::Config(format!("bad ladder size `{part}` (expected NxM)"));
            let (n, m) = part.trim().split_once(['x', 'X']).ok_or_else(bad)?;
            let (n, m): (usize, usize) =
                (n.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
            if n == 0 || m == 0 {
                return Err(bad());
            }
            Ok((n, m))
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, a) in sizes.iter().enumerate() {
        if sizes[..i].contains(a) {
            return Err(Error::Config(format!(
                "ladder size {}x{} repeated",
                a.0, a.1
            )));
        }
    }
    Ok(sizes)
}

impl Ladder {
    pub fn new(sizes: &[(usize, usize)], test_size: usize, seed: u64) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("ladder needs at least one size".into()));
        }
        let levels = sizes
            .iter()
            .map(|&(n, m)| TestSet::generate(n, m, test_size, seed))
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn sizes(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|t| (t.n, t.m)).collect()
    }
}

/// Recomputes `gaps[l]` for `l` in `0..=upto` as the mean greedy gap on each
/// level's test set, floored at zero.
pub fn refresh_gaps(
    state: &mut CurriculumState,
    net: &PolicyNet<f32>,
    ladder: &Ladder,
    upto: usize,
) -> Result<()> {
    for l in 0..=upto.min(ladder.len() - 1) {
        state.gaps[l] = ladder.levels[l].greedy_gap(net)?.max(0.0);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelLogRow {
    pub iteration: usize,
    pub event: LevelEvent,
    pub level: usize,
    pub gaps: Vec<f64>,
}

pub fn level_log_csv(rows: &[LevelLogRow], n_levels: usize) -> String {
    let mut out = String::from("iteration,event,level");
    for l in 0..n_levels {
        out.push_str(&format!(",g{l}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.iteration, r.event.name(), r.level));
        for g in &r.gaps {
            out.push_str(&format!(",{g:.4}"));
        }
        out.push('\n');
    }
    out
}

/// Training driver that draws fresh random instances at the level chosen
/// by a curriculum.
pub struct CurriculumDriver {
    pub kind: CurriculumKind,
    pub state: CurriculumState,
    pub ladder: Ladder,
    pub seed: u64,
    pub log: Vec<LevelLogRow>,
}

impl CurriculumDriver {
    pub fn new(
        kind: CurriculumKind,
        params: CurriculumParams,
        ladder: Ladder,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let state = CurriculumState::new(ladder.len(), params);
        Ok(Self {
            kind,
            state,
            ladder,
            seed,
            log: Vec::new(),
        })
    }

    fn record(&mut self, event: LevelEvent) {
        self.log.push(LevelLogRow {
            iteration: self.state.iter,
            event,
            level: self.state.train_level,
            gaps: self.state.gaps.clone(),
        });
    }

    /// Chooses the level for iteration `iter`; `None` ends training.
    pub fn choose_level(&mut self, iter: usize, net: &PolicyNet<f32>) -> Result<Option<usize>> {
        let s = &mut self.state;
        s.iter = iter;
        let n_levels = self.ladder.len();
        if s.is_check() {
            let upto = match self.kind {
                CurriculumKind::Ucl => n_levels - 1,
                _ => s.level,
            };
            refresh_gaps(s, net, &self.ladder, upto)?;
        }
        let event = match self.kind {
            CurriculumKind::Icl => {
                let Some(l) = next_level_icl(iter, s.params.icl_budget, n_levels) else {
                    s.finished = true;
                    self.record(LevelEvent::Terminate);
                    return Ok(None);
                };
                let event = if l > s.level {
                    Some(LevelEvent::Advance)
                } else {
                    s.is_check().then_some(LevelEvent::Stay)
                };
                s.level = l;
                s.train_level = l;
                event
            }
            CurriculumKind::Ucl => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, UCL_STREAM, iter as u64));
                s.train_level = next_level_ucl(n_levels, &mut rng);
                s.level = n_levels - 1;
                s.is_check().then_some(LevelEvent::Sample)
            }
            CurriculumKind::Ascl => next_level_ascl(s),
            CurriculumKind::Rascl => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, RASCL_STREAM, iter as u64));
                next_level_rascl(s, &mut rng)?
            }
        };
        if let Some(e) = event {
            self.record(e);
        }
        if self.state.finished {
            return Ok(None);
        }
        Ok(Some(self.state.train_level))
    }
}

impl Driver for CurriculumDriver {
    fn next_batch(
        &mut self,
        iter: usize,
        batch_size: usize,
        net: &PolicyNet<f32>,
    ) -> Result<Option<LevelBatch>> {
        let Some(level) = self.choose_level(iter, net)? else {
            return Ok(None);
        };
        let t = &self.ladder.levels[level];
        let instances = (0..batch_size)
            .map(|k| {
                generate(
                    t.n,
                    t.m,
                    seeds::derive(self.seed ^ TRAIN_STREAM, iter as u64, k as u64),
                )
            })
            .collect();
        Ok(Some(LevelBatch { level, instances }))
    }
}
