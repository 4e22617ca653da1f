//! Sequential scheduling environment.
//!
//! A schedule is built one dispatch at a time: the action is a job index and
//! dispatching it places that job's next operation at the earliest time both
//! the job and the machine are free. Operations are appended; they are never
//! inserted into idle gaps left earlier on a machine.

use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::instance::{check_permutation, Instance, Time};

/// Mutable resolution state of one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleState {
    /// Per job, index of the first unscheduled operation (`m` when finished).
    pub next_op: Vec<usize>,
    /// Per job, completion time of its last scheduled operation.
    pub job_ready: Vec<Time>,
    /// Per machine, completion time of its last scheduled operation.
    pub machine_free: Vec<Time>,
    /// Largest completion time scheduled so far.
    pub partial_makespan: Time,
    /// Number of dispatched operations.
    pub step: usize,
    /// Per job, processing time still to schedule.
    pub remaining_work: Vec<Time>,
    /// Start times, row-major `n x m`; meaningful only for scheduled ops.
    start: Vec<Time>,
    n_machines: usize,
}

impl ScheduleState {
    pub fn new(inst: &Instance) -> Self {
        let n = inst.n_jobs();
        let m = inst.n_machines();
        Self {
            next_op: vec![0; n],
            job_ready: vec![0; n],
            machine_free: vec![0; m],
            partial_makespan: 0,
            step: 0,
            remaining_work: (0..n).map(|i| inst.job_total(i)).collect(),
            start: vec![0; n * m],
            n_machines: m,
        }
    }

    pub fn n_jobs(&self) -> usize {
        self.next_op.len()
    }

    pub fn is_finished(&self, job: usize) -> bool {
        self.next_op[job] >= self.n_machines
    }

    pub fn is_terminal(&self) -> bool {
        self.step == self.next_op.len() * self.n_machines
    }

    pub fn remaining_ops(&self, job: usize) -> usize {
        self.n_machines - self.next_op[job]
    }

    /// Jobs that still have operations to schedule, in ascending order.
    pub fn legal_actions(&self) -> Vec<usize> {
        (0..self.n_jobs())
            .filter(|&j| !self.is_finished(j))
            .collect()
    }

    /// Start time the next operation of `job` would get if dispatched now.
    pub fn earliest_start(&self, inst: &Instance, job: usize) -> Result<Time> {
        if self.is_finished(job) {
            return Err(Error::IllegalAction {
                job,
                reason: "job is finished",
            });
        }
        let op = inst.op(job, self.next_op[job]);
        Ok(self.job_ready[job].max(self.machine_free[op.machine]))
    }

    /// Dispatches the next operation of `job` in place and returns the
    /// reward, i.e. the increase of the partial makespan.
    pub fn dispatch(&mut self, inst: &Instance, job: usize) -> Result<Time> {
        if job >= self.n_jobs() {
            return Err(Error::IllegalAction {
                job,
                reason: "no such job",
            });
        }
        let start = self.earliest_start(inst, job)?;
        let index = self.next_op[job];
        let op = inst.op(job, index);
        let end = start + op.duration;
        self.start[job * self.n_machines + index] = start;
        self.job_ready[job] = end;
        self.machine_free[op.machine] = end;
        self.next_op[job] += 1;
        self.remaining_work[job] -= op.duration;
        self.step += 1;
        let before = self.partial_makespan;
        self.partial_makespan = before.max(end);
        Ok(self.partial_makespan - before)
    }

    /// The completed schedule, or `None` before the episode ends.
    pub fn schedule(&self) -> Option<Schedule> {
        self.is_terminal().then(|| Schedule {
            start: self
                .start
                .chunks(self.n_machines)
                .map(<[Time]>::to_vec)
                .collect(),
        })
    }

    /// State of the job-permuted instance `inst.permute_jobs(perm)`.
    pub fn permute_jobs(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_jobs())?;
        let m = self.n_machines;
        let mut start = Vec::with_capacity(self.start.len());
        for &p in perm {
            start.extend_from_slice(&self.start[p * m..(p + 1) * m]);
        }
        Ok(Self {
            next_op: perm.iter().map(|&p| self.next_op[p]).collect(),
            job_ready: perm.iter().map(|&p| self.job_ready[p]).collect(),
            machine_free: self.machine_free.clone(),
            partial_makespan: self.partial_makespan,
            step: self.step,
            remaining_work: perm.iter().map(|&p| self.remaining_work[p]).collect(),
            start,
            n_machines: m,
        })
    }
}

/// Jobs with unscheduled operations; empty exactly at the terminal state.
pub fn legal_actions(state: &ScheduleState, _inst: &Instance) -> Vec<usize> {
    state.legal_actions()
}

/// Functional form of [`ScheduleState::dispatch`].
pub fn step(
    state: &ScheduleState,
    inst: &Instance,
    action: usize,
) -> Result<(ScheduleState, Time)> {
    let mut next = state.clone();
    let reward = next.dispatch(inst, action)?;
    Ok((next, reward))
}

/// A complete assignment of start times, `start[job][op]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub start: Vec<Vec<Time>>,
}

impl Schedule {
    pub fn completion(&self, inst: &Instance, job: usize, op: usize) -> Time {
        self.start[job][op] + inst.op(job, op).duration
    }

    pub fn makespan(&self, inst: &Instance) -> Time {
        (0..inst.n_jobs())
            .flat_map(|i| (0..inst.n_machines()).map(move |j| (i, j)))
            .map(|(i, j)| self.completion(inst, i, j))
            .max()
            .unwrap_or(0)
    }

    /// CSV with header `job,op,machine,start,end` and a `# makespan,<T>` footer.
    pub fn to_csv(&self, inst: &Instance) -> String {
        let mut out = String::from("job,op,machine,start,end\n");
        for (i, row) in self.start.iter().enumerate() {
            for (j, &s) in row.iter().enumerate() {
                let op = inst.op(i, j);
                let _ = writeln!(out, "{i},{j},{},{s},{}", op.machine, s + op.duration);
            }
        }
        let _ = writeln!(out, "# makespan,{}", self.makespan(inst));
        out
    }
}

/// First constraint violation found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    Precedence {
        job: usize,
        op: usize,
    },
    Overlap {
        machine: usize,
        first: (usize, usize),
        second: (usize, usize),
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { expected, found } => {
                write!(
                    f,
                    "schedule is {}x{}, instance is {}x{}",
                    found.0, found.1, expected.0, expected.1
                )
            }
            Violation::Precedence { job, op } => {
                write!(
                    f,
                    "precedence: O({job},{op}) starts before O({job},{}) completes",
                    op - 1
                )
            }
            Violation::Overlap {
                machine,
                first,
                second,
            } => write!(
                f,
                "overlap on machine {machine}: O({},{}) and O({},{})",
                first.0, first.1, second.0, second.1
            ),
        }
    }
}

/// Checks precedence and no-overlap; non-preemption holds by construction.
pub fn validate(sched: &Schedule, inst: &Instance) -> std::result::Result<(), Violation> {
    let (n, m) = (inst.n_jobs(), inst.n_machines());
    let cols = sched.start.first().map_or(0, Vec::len);
    if sched.start.len() != n || sched.start.iter().any(|r| r.len() != m) {
        return Err(Violation::Shape {
            expected: (n, m),
            found: (sched.start.len(), cols),
        });
    }
    for i in 0..n {
        for j in 1..m {
            if sched.start[i][j] < sched.completion(inst, i, j - 1) {
                return Err(Violation::Precedence { job: i, op: j });
            }
        }
    }
    let mut per_machine: Vec<Vec<(Time, Time, usize, usize)>> = vec![Vec::new(); m];
    for i in 0..n {
        for j in 0..m {
            let s = sched.start[i][j];
            per_machine[inst.op(i, j).machine].push((s, s + inst.op(i, j).duration, i, j));
        }
    }
    for (machine, ops) in per_machine.iter_mut().enumerate() {
        ops.sort_unstable();
        for w in ops.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Violation::Overlap {
                    machine,
                    first: (w[0].2, w[0].3),
                    second: (w[1].2, w[1].3),
                });
            }
        }
    }
    Ok(())
}

/// Output of a complete episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rollout {
    pub schedule: Schedule,
    pub makespan: Time,
    pub actions: Vec<usize>,
    pub rewards: Vec<Time>,
}

/// Runs `policy` until every operation is dispatched.
pub fn rollout<P>(inst: &Instance, mut policy: P) -> Result<Rollout>
where
    P: FnMut(&ScheduleState, &Instance) -> Result<usize>,
{
    let mut state = ScheduleState::new(inst);
    let total = inst.n_operations();
    let mut actions = Vec::with_capacity(total);
    let mut rewards = Vec::with_capacity(total);
    while !state.is_terminal() {
        let action = policy(&state, inst)?;
        rewards.push(state.dispatch(inst, action)?);
        actions.push(action);
    }
    let schedule = state.schedule().expect("terminal state");
    Ok(Rollout {
        schedule,
        makespan: state.partial_makespan,
        actions,
        rewards,
    })
}

/// Replays a fixed dispatch order.
pub fn replay(inst: &Instance, actions: &[usize]) -> Result<Rollout> {
    let mut it = actions.iter();
    rollout(inst, |_, _| {
        it.next()
            .copied()
            .ok_or(Error::Config("action sequence too short".into()))
    })
}

/// `max(max job total, max machine load)`, a bound no schedule can beat.
pub fn lower_bound(inst: &Instance) -> Time {
    let jobs = (0..inst.n_jobs())
        .map(|i| inst.job_total(i))
        .max()
        .unwrap_or(0);
    let machines = inst.machine_loads().into_iter().max().unwrap_or(0);
    jobs.max(machines)
}

/// Optimality gap in percent, `100 (makespan - ub) / ub`, unrounded.
pub fn gap_percent(makespan: Time, ub: Time) -> f64 {
    assert!(ub >= 1, "upper bound must be positive");
    100.0 * (f64::from(makespan) - f64::from(ub)) / f64::from(ub)
}

/// Gap in hundredths of a percent, rounded half-up in exact integer arithmetic.
pub fn gap_hundredths(makespan: Time, ub: Time) -> i64 {
    assert!(ub >= 1, "upper bound must be positive");
    let num = 10_000 * (i64::from(makespan) - i64::from(ub));
    let den = i64::from(ub);
    (2 * num + den).div_euclid(2 * den)
}

/// Gap as reported in tables: percent rounded half-up to two decimals.
pub fn reported_gap(makespan: Time, ub: Time) -> f64 {
    gap_hundredths(makespan, ub) as f64 / 100.0
}

/// Rounds a percentage half-up to two decimals.
pub fn round_percent(value: f64) -> f64 {
    (value * 100.0 + 0.5).floor() / 100.0
}
