//! Problem definitions: operations, instances, file formats, random
//! generation and the registry of published upper bounds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Integer time unit used for durations, start times and makespans.
pub type Time = u32;

/// Largest duration produced by [`generate`].
pub const MAX_GENERATED_DURATION: Time = 99;

/// One processing step of a job: the machine it needs and for how long.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Operation {
    pub machine: usize,
    pub duration: Time,
}

impl Operation {
    pub fn new(machine: usize, duration: Time) -> Self {
        Self { machine, duration }
    }
}

/// A square job-shop instance: `n_jobs` jobs, each visiting every one of the
/// `n_machines` machines exactly once in a fixed order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub name: String,
    n_jobs: usize,
    n_machines: usize,
    jobs: Vec<Vec<Operation>>,
}

impl Instance {
    /// Builds an instance and checks every structural invariant.
    pub fn new(name: impl Into<String>, jobs: Vec<Vec<Operation>>) -> Result<Self> {
        let n_jobs = jobs.len();
        if n_jobs == 0 {
            return Err(Error::InvalidInstance(
                "an instance needs at least one job".into(),
            ));
        }
        let n_machines = jobs[0].len();
        if n_machines == 0 {
            return Err(Error::InvalidInstance(
                "jobs need at least one operation".into(),
            ));
        }
        for (i, job) in jobs.iter().enumerate() {
            check_job(i, job, n_machines).map_err(Error::InvalidInstance)?;
        }
        Ok(Self {
            name: name.into(),
            n_jobs,
            n_machines,
            jobs,
        })
    }

    pub fn n_jobs(&self) -> usize {
        self.n_jobs
    }

    pub fn n_machines(&self) -> usize {
        self.n_machines
    }

    /// Number of operations, `n * m`.
    pub fn n_operations(&self) -> usize {
        self.n_jobs * self.n_machines
    }

    pub fn jobs(&self) -> &[Vec<Operation>] {
        &self.jobs
    }

    pub fn job(&self, job: usize) -> &[Operation] {
        &self.jobs[job]
    }

    pub fn op(&self, job: usize, index: usize) -> Operation {
        self.jobs[job][index]
    }

    pub fn job_total(&self, job: usize) -> Time {
        self.jobs[job].iter().map(|op| op.duration).sum()
    }

    /// Total processing time requested from each machine.
    pub fn machine_loads(&self) -> Vec<Time> {
        let mut loads = vec![0; self.n_machines];
        for op in self.jobs.iter().flatten() {
            loads[op.machine] += op.duration;
        }
        loads
    }

    pub fn total_work(&self) -> Time {
        self.jobs.iter().flatten().map(|op| op.duration).sum()
    }

    /// Returns a copy whose job `k` is job `perm[k]` of `self`.
    pub fn permute_jobs(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_jobs)?;
        let jobs = perm.iter().map(|&p| self.jobs[p].clone()).collect();
        Ok(Self {
            name: self.name.clone(),
            n_jobs: self.n_jobs,
            n_machines: self.n_machines,
            jobs,
        })
    }

    /// Serializes to the standard format read by [`parse_standard`].
    pub fn to_standard(&self) -> String {
        let mut out = String::new();
        if !self.name.is_empty() {
            let _ = writeln!(out, "# {}", self.name);
        }
        let _ = writeln!(out, "{} {}", self.n_jobs, self.n_machines);
        for job in &self.jobs {
            let line: Vec<String> = job
                .iter()
                .map(|op| format!("{} {}", op.machine, op.duration))
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Config(format!(
            "permutation has {} entries, expected {n}",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Config(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
    }
    Ok(())
}

fn check_job(
    index: usize,
    job: &[Operation],
    n_machines: usize,
) -> std::result::Result<(), String> {
    if job.len() != n_machines {
        return Err(format!(
            "job {index} has {} operations, expected {n_machines}",
            job.len()
        ));
    }
    let mut seen = vec![false; n_machines];
    for op in job {
        if op.duration == 0 {
            return Err(format!("job {index} has an operation with zero duration"));
        }
        if op.machine >= n_machines {
            return Err(format!(
                "machine {} out of range in job {index}",
                op.machine
            ));
        }
        if std::mem::replace(&mut seen[op.machine], true) {
            return Err(format!("duplicate machine {} in job {index}", op.machine));
        }
    }
    Ok(())
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_numbers(line_no: usize, line: &str) -> Result<Vec<u64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<u64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("expected a non-negative integer, found `{tok}`"),
            })
        })
        .collect()
}

fn parse_header(line_no: usize, nums: &[u64]) -> Result<(usize, usize)> {
    match nums {
        [n, m, ..] if *n >= 1 && *m >= 1 => Ok((*n as usize, *m as usize)),
        _ => Err(Error::Parse {
            line: line_no,
            msg: "header must start with `n m` (both >= 1)".into(),
        }),
    }
}

fn to_time(line: usize, value: u64) -> Result<Time> {
    Time::try_from(value)
        .ok()
        .filter(|&d| d >= 1)
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("invalid duration {value}"),
        })
}

/// Parses the standard format: a header `n m`, then one line per job with
/// `m` pairs `machine duration` (0-based machines). `#` starts a comment line.
pub fn parse_standard(text: &str) -> Result<Instance> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let (n, m) = parse_header(hl, &parse_numbers(hl, header)?)?;
    let mut jobs = Vec::with_capacity(n);
    for i in 0..n {
        let (line_no, line) = lines.next().ok_or(Error::Parse {
            line: hl + i + 1,
            msg: format!("expected {n} job lines, found {i}"),
        })?;
        let nums = parse_numbers(line_no, line)?;
        if nums.len() != 2 * m {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "job {i} has {} values, expected {} (m pairs)",
                    nums.len(),
                    2 * m
                ),
            });
        }
        let job = nums
            .chunks(2)
            .map(|pair| Ok(Operation::new(pair[0] as usize, to_time(line_no, pair[1])?)))
            .collect::<Result<Vec<_>>>()?;
        check_job(i, &job, m).map_err(|msg| Error::Parse { line: line_no, msg })?;
        jobs.push(job);
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(Error::Parse {
            line: line_no,
            msg: "unexpected trailing content".into(),
        });
    }
    Instance::new("", jobs)
}

/// Parses Taillard's published layout: a header whose first two numbers are
/// `n m`, an `n x m` matrix of processing times and an `n x m` matrix of
/// 1-based machine indices. Label lines such as `Times` / `Machines` are
/// skipped.
pub fn parse_taillard(text: &str) -> Result<Instance> {
    let mut rows = Vec::new();
    for (line_no, line) in content_lines(text) {
        let first = line.split_whitespace().next().unwrap_or("");
        if first.parse::<u64>().is_err() {
            continue;
        }
        rows.push((line_no, parse_numbers(line_no, line)?));
    }
    let Some(((hl, header), body)) = rows.split_first() else {
        return Err(Error::Parse {
            line: 1,
            msg: "empty input".into(),
        });
    };
    let (n, m) = parse_header(*hl, header)?;
    if body.len() != 2 * n {
        let line = body.last().map_or(*hl, |r| r.0);
        return Err(Error::Parse {
            line,
            msg: format!(
                "expected {n} time rows and {n} machine rows, found {} rows",
                body.len()
            ),
        });
    }
    let (times, machines) = body.split_at(n);
    let mut jobs = Vec::with_capacity(n);
    for (i, ((tl, trow), (ml, mrow))) in times.iter().zip(machines).enumerate() {
        if trow.len() != m {
            return Err(Error::Parse {
                line: *tl,
                msg: format!("time row has {} entries, expected {m}", trow.len()),
            });
        }
        if mrow.len() != m {
            return Err(Error::Parse {
                line: *ml,
                msg: format!("machine row has {} entries, expected {m}", mrow.len()),
            });
        }
        let mut job = Vec::with_capacity(m);
        for (&d, &k) in trow.iter().zip(mrow) {
            if k < 1 || k > m as u64 {
                return Err(Error::Parse {
                    line: *ml,
                    msg: format!("machine index {k} out of range 1..={m}"),
                });
            }
            job.push(Operation::new(k as usize - 1, to_time(*tl, d)?));
        }
        check_job(i, &job, m).map_err(|msg| Error::Parse { line: *ml, msg })?;
        jobs.push(job);
    }
    Instance::new("", jobs)
}

/// Instance file layouts understood by [`load_instance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Standard,
    Taillard,
}

/// Reads an instance file; the instance is named after the file stem.
pub fn load_instance(path: &Path, format: Format) -> Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    let mut inst = match format {
        Format::Standard => parse_standard(&text),
        Format::Taillard => parse_taillard(&text),
    }
    .map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })?;
    inst.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(inst)
}

/// Random instance with durations uniform in `1..=99` and an independent
/// uniformly random machine order per job. Pure in `(n, m, seed)`.
pub fn generate(n: usize, m: usize, seed: u64) -> Instance {
    assert!(n >= 1 && m >= 1, "generate needs n >= 1 and m >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs = (0..n)
        .map(|_| {
            let mut machines: Vec<usize> = (0..m).collect();
            machines.shuffle(&mut rng);
            machines
                .into_iter()
                .map(|k| Operation::new(k, rng.gen_range(1..=MAX_GENERATED_DURATION)))
                .collect()
        })
        .collect();
    let mut inst = Instance::new("", jobs).expect("generated instances are valid");
    inst.name = format!("rand{n}x{m}-{seed}");
    inst
}

/// A published upper bound for a named benchmark instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UbEntry {
    pub instance_name: String,
    pub n_jobs: usize,
    pub n_machines: usize,
    pub upper_bound: Time,
    pub proven_optimal: bool,
}

/// Name-indexed collection of [`UbEntry`] values, read from a CSV with the
/// header `name,n,m,ub,optimal`.
#[derive(Clone, Debug, Default)]
pub struct UbRegistry {
    entries: Vec<UbEntry>,
    index: HashMap<String, usize>,
}

const BUILTIN_REGISTRY: &str = include_str!("../data/ub_registry.csv");

impl UbRegistry {
    /// Upper bounds for Taillard's TA1-TA80 and Demirkol's DMU1-DMU80.
    pub fn builtin() -> Self {
        Self::from_csv(BUILTIN_REGISTRY).expect("bundled registry is well formed")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let expected = ["name", "n", "m", "ub", "optimal"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("registry header must be `{}`", expected.join(",")),
            });
        }
        let mut registry = Self::default();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let field = |k: usize| record.get(k).unwrap_or("");
            let num = |k: usize| {
                field(k).parse::<u64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number `{}`", field(k)),
                })
            };
            let optimal = match field(4) {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("bad optimal flag `{other}`"),
                    })
                }
            };
            let ub = num(3)?;
            if ub == 0 || ub > Time::MAX as u64 {
                return Err(Error::Parse {
                    line,
                    msg: format!("bad upper bound {ub}"),
                });
            }
            registry.insert(UbEntry {
                instance_name: field(0).to_string(),
                n_jobs: num(1)? as usize,
                n_machines: num(2)? as usize,
                upper_bound: ub as Time,
                proven_optimal: optimal,
            });
        }
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, entry: UbEntry) {
        match self.index.get(&entry.instance_name) {
            Some(&i) => self.entries[i] = entry,
            None => {
                self.index
                    .insert(entry.instance_name.clone(), self.entries.len());
                self.entries.push(entry);
            }
        }
    }

    pub fn lookup(&self, name: &str) -> Result<&UbEntry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownInstance(name.to_string()))
    }

    pub fn entries(&self) -> &[UbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Looks up `name` in `registry`.
pub fn ub_lookup<'r>(registry: &'r UbRegistry, name: &str) -> Result<&'r UbEntry> {
    registry.lookup(name)
}
