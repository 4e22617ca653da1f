//! Exact minimum makespan for tiny instances by depth-first branch and bound
//! over dispatch sequences.
//!
//! The optimum is taken over append-only dispatch sequences, the same action
//! space every policy in this crate uses. It can exceed the classical job-shop
//! optimum, which also admits schedules that insert operations into idle gaps.

use crate::env::{replay, Schedule, ScheduleState};
use crate::error::Result;
use crate::instance::{Instance, Time};
use crate::pdr;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    pub makespan: Time,
    pub schedule: Schedule,
    pub actions: Vec<usize>,
    /// Search nodes expanded.
    pub nodes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleError {
    /// The node budget ran out; carries the best schedule found so far.
    BudgetExceeded {
        incumbent: Solution,
    },
    Invalid(String),
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleError::BudgetExceeded { incumbent } => write!(
                f,
                "node budget exceeded after {} nodes; best makespan found {}",
                incumbent.nodes, incumbent.makespan
            ),
            OracleError::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for OracleError {}

struct Search<'a> {
    inst: &'a Instance,
    machine_remaining: Vec<Time>,
    best: Time,
    best_actions: Vec<usize>,
    path: Vec<usize>,
    nodes: u64,
    budget: u64,
    prune: bool,
    exhausted: bool,
}

impl Search<'_> {
    /// Admissible bound under append semantics: a job cannot finish before
    /// its ready time plus its remaining work, and a machine cannot finish
    /// before its free time plus its remaining load.
    fn bound(&self, s: &ScheduleState) -> Time {
        let jobs = (0..s.n_jobs()).map(|i| s.job_ready[i] + s.remaining_work[i]);
        let machines = s
            .machine_free
            .iter()
            .zip(&self.machine_remaining)
            .map(|(&f, &r)| if r > 0 { f + r } else { 0 });
        jobs.chain(machines)
            .max()
            .unwrap_or(0)
            .max(s.partial_makespan)
    }

    fn dfs(&mut self, state: &ScheduleState) {
        if self.exhausted {
            return;
        }
        if state.is_terminal() {
            if state.partial_makespan < self.best || self.best_actions.is_empty() {
                self.best = state.partial_makespan;
                self.best_actions = self.path.clone();
            }
            return;
        }
        if self.prune && self.bound(state) >= self.best {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        let mut children: Vec<(Time, usize)> = state
            .legal_actions()
            .into_iter()
            .map(|j| (state.earliest_start(self.inst, j).expect("legal"), j))
            .collect();
        children.sort_unstable();
        for (_, job) in children {
            let mut next = state.clone();
            let op = self.inst.op(job, next.next_op[job]);
            next.dispatch(self.inst, job).expect("legal");
            self.machine_remaining[op.machine] -= op.duration;
            self.path.push(job);
            self.dfs(&next);
            self.path.pop();
            self.machine_remaining[op.machine] += op.duration;
        }
    }
}

/// Minimum makespan over all dispatch sequences, or the incumbent when more
/// than `node_budget` nodes would be needed.
pub fn solve_exact(
    inst: &Instance,
    node_budget: u64,
) -> std::result::Result<Solution, OracleError> {
    solve(inst, node_budget, true)
}

/// [`solve_exact`] with bound pruning switched on or off. Without pruning the
/// search enumerates every dispatch sequence.
pub fn solve(
    inst: &Instance,
    node_budget: u64,
    prune: bool,
) -> std::result::Result<Solution, OracleError> {
    let invalid = |e: crate::error::Error| OracleError::Invalid(e.to_string());
    let (best, best_actions) = if prune {
        let (_, r) = pdr::best_of_rules(inst).map_err(invalid)?;
        (r.makespan, r.actions)
    } else {
        (Time::MAX, Vec::new())
    };
    let mut search = Search {
        inst,
        machine_remaining: inst.machine_loads(),
        best,
        best_actions,
        path: Vec::with_capacity(inst.n_operations()),
        nodes: 0,
        budget: node_budget,
        prune,
        exhausted: false,
    };
    search.dfs(&ScheduleState::new(inst));
    let finish = |s: &Search| -> Result<Solution> {
        let r = replay(inst, &s.best_actions)?;
        Ok(Solution {
            makespan: r.makespan,
            schedule: r.schedule,
            actions: s.best_actions.clone(),
            nodes: s.nodes,
        })
    };
    if search.exhausted {
        if search.best_actions.is_empty() {
            // No complete sequence reached yet: fall back to the best rule.
            let (_, r) = pdr::best_of_rules(inst).map_err(invalid)?;
            search.best_actions = r.actions;
        }
        let incumbent = finish(&search).map_err(invalid)?;
        return Err(OracleError::BudgetExceeded { incumbent });
    }
    finish(&search).map_err(invalid)
}
