//! Priority dispatch rules.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{rollout, Rollout, ScheduleState};
use crate::error::{Error, Result};
use crate::instance::Instance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PdrKind {
    /// Shortest processing time of the next operation.
    Spt,
    /// Minimum ratio of flow due date to work remaining.
    FddWkr,
    /// Most work remaining.
    Mwkr,
    /// Most operations remaining.
    Mopnr,
    /// Uniformly random legal job.
    Random(u64),
}

impl PdrKind {
    /// The four deterministic rules.
    pub const RULES: [PdrKind; 4] = [PdrKind::Spt, PdrKind::FddWkr, PdrKind::Mwkr, PdrKind::Mopnr];

    fn maximizes(self) -> bool {
        matches!(self, PdrKind::Mwkr | PdrKind::Mopnr)
    }

    pub fn name(self) -> &'static str {
        match self {
            PdrKind::Spt => "spt",
            PdrKind::FddWkr => "fddwkr",
            PdrKind::Mwkr => "mwkr",
            PdrKind::Mopnr => "mopnr",
            PdrKind::Random(_) => "random",
        }
    }
}

impl fmt::Display for PdrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PdrKind {
    type Err = Error;

    /// Accepts `spt`, `fddwkr`, `mwkr`, `mopnr`, `random` and `random:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "spt" => PdrKind::Spt,
            "fddwkr" | "fdd/wkr" => PdrKind::FddWkr,
            "mwkr" => PdrKind::Mwkr,
            "mopnr" => PdrKind::Mopnr,
            "random" => PdrKind::Random(0),
            other => match other.strip_prefix("random:").map(str::parse) {
                Some(Ok(seed)) => PdrKind::Random(seed),
                _ => return Err(Error::Config(format!("unknown rule `{s}`"))),
            },
        })
    }
}

/// Priority of `job` under `kind`. Whether smaller or larger wins depends on
/// the rule; [`select`] handles the direction. `Random` scores every job 0.
pub fn score(kind: PdrKind, state: &ScheduleState, inst: &Instance, job: usize) -> Result<f64> {
    if job >= state.n_jobs() || state.is_finished(job) {
        return Err(Error::IllegalAction {
            job,
            reason: "job is finished",
        });
    }
    let next = state.next_op[job];
    Ok(match kind {
        PdrKind::Spt => f64::from(inst.op(job, next).duration),
        PdrKind::Mwkr => f64::from(state.remaining_work[job]),
        PdrKind::Mopnr => state.remaining_ops(job) as f64,
        PdrKind::FddWkr => {
            let flow: u32 = inst.job(job)[..=next].iter().map(|o| o.duration).sum();
            f64::from(flow) / f64::from(state.remaining_work[job])
        }
        PdrKind::Random(_) => 0.0,
    })
}

/// Best legal job under a deterministic rule, ties to the lowest index.
fn best_job(kind: PdrKind, state: &ScheduleState, inst: &Instance) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for job in state.legal_actions() {
        let s = score(kind, state, inst, job)?;
        let better = match best {
            None => true,
            Some((_, b)) if kind.maximizes() => s > b,
            Some((_, b)) => s < b,
        };
        if better {
            best = Some((job, s));
        }
    }
    best.map(|(j, _)| j).ok_or(Error::Terminal)
}

/// A rule bound to its own random stream, usable as an episode policy.
#[derive(Clone, Debug)]
pub struct Dispatcher {
    kind: PdrKind,
    rng: Option<ChaCha8Rng>,
}

impl Dispatcher {
    pub fn new(kind: PdrKind) -> Self {
        let rng = match kind {
            PdrKind::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        Self { kind, rng }
    }

    pub fn kind(&self) -> PdrKind {
        self.kind
    }

    pub fn select(&mut self, state: &ScheduleState, inst: &Instance) -> Result<usize> {
        match &mut self.rng {
            Some(rng) => {
                let legal = state.legal_actions();
                if legal.is_empty() {
                    return Err(Error::Terminal);
                }
                Ok(legal[rng.gen_range(0..legal.len())])
            }
            None => best_job(self.kind, state, inst),
        }
    }
}

/// One-shot selection. `Random` kinds draw from a fresh stream seeded by the
/// kind's seed and the current step, so repeated calls are reproducible.
pub fn select(kind: PdrKind, state: &ScheduleState, inst: &Instance) -> Result<usize> {
    match kind {
        PdrKind::Random(seed) => Dispatcher::new(PdrKind::Random(crate::seeds::derive(
            seed,
            0x9d2c,
            state.step as u64,
        )))
        .select(state, inst),
        _ => best_job(kind, state, inst),
    }
}

/// Full episode under `kind`.
pub fn run(kind: PdrKind, inst: &Instance) -> Result<Rollout> {
    let mut d = Dispatcher::new(kind);
    rollout(inst, |s, i| d.select(s, i))
}

/// Smallest makespan among the four deterministic rules, with its rule.
pub fn best_of_rules(inst: &Instance) -> Result<(PdrKind, Rollout)> {
    let mut best: Option<(PdrKind, Rollout)> = None;
    for kind in PdrKind::RULES {
        let r = run(kind, inst)?;
        if best.as_ref().map_or(true, |(_, b)| r.makespan < b.makespan) {
            best = Some((kind, r));
        }
    }
    Ok(best.expect("four rules"))
}
