//! Size-agnostic actor-critic dispatch policy.
//!
//! Static branch: every operation has a 3-feature vector that never changes
//! during an episode. A reverse LSTM, batched over jobs, runs from the last
//! operation to the first, so the hidden state at operation `j` summarizes
//! the job's work from `j` on. A job's embedding is that hidden state at its
//! next operation.
//!
//! Dynamic branch: four normalized clock and progress features per job.
//!
//! A set2set readout over the unfinished jobs' embeddings forms the global
//! context. The actor scores each unfinished job from (embedding, dynamic
//! features, context); the critic reads (context, mean dynamic features).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{lower_bound, ScheduleState};
use crate::error::{Error, Result};
use crate::instance::{Instance, MAX_GENERATED_DURATION};
use crate::nncore::checkpoint::Checkpoint;
use crate::nncore::layers::{
    add_lstm_params, canonical_mean_rows, dense_forward, lstm_cell, set2set, LstmVars,
};
use crate::nncore::params::uniform_init;
use crate::nncore::{masked_softmax, ParamStore, ParamVars, Scalar, Tape, Tensor, Var};

pub const STATIC_DIM: usize = 3;
pub const DYNAMIC_DIM: usize = 4;
const CONFIG_RECORD: &str = "meta.config";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub set2set_steps: usize,
    pub static_feature_dim: usize,
    pub dynamic_feature_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            set2set_steps: 3,
            static_feature_dim: STATIC_DIM,
            dynamic_feature_dim: DYNAMIC_DIM,
        }
    }
}

impl PolicyConfig {
    pub fn with_embed_dim(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.set2set_steps == 0 {
            return Err(Error::Config(
                "embed_dim and set2set_steps must be at least 1".into(),
            ));
        }
        if self.static_feature_dim != STATIC_DIM || self.dynamic_feature_dim != DYNAMIC_DIM {
            return Err(Error::Config(format!(
                "feature dims are fixed at {STATIC_DIM} static and {DYNAMIC_DIM} dynamic, got {} and {}",
                self.static_feature_dim, self.dynamic_feature_dim
            )));
        }
        Ok(())
    }
}

/// Action distribution and baseline for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    /// One entry per job; finished jobs get exactly zero.
    pub probs: Vec<f64>,
    /// Estimated remaining return in time units.
    pub value: f64,
}

fn op_features(
    inst: &Instance,
    loads: &[u32],
    total: f64,
    job: usize,
    j: usize,
) -> [f64; STATIC_DIM] {
    let m = inst.n_machines() as f64;
    let op = inst.op(job, j);
    [
        (f64::from(op.duration) / f64::from(MAX_GENERATED_DURATION)).min(1.0),
        f64::from(loads[op.machine]) / total,
        (m - j as f64) / m,
    ]
}

/// Feature vectors of the job's remaining operations, current one first:
/// `(duration / 99, machine load / total work, (m - j) / m)` for operation
/// `j`. Durations above 99 saturate at 1.
pub fn static_features(
    inst: &Instance,
    state: &ScheduleState,
    job: usize,
) -> Result<Vec<[f64; STATIC_DIM]>> {
    if job >= state.n_jobs() || state.is_finished(job) {
        return Err(Error::IllegalAction {
            job,
            reason: "job is finished",
        });
    }
    let loads = inst.machine_loads();
    let total = f64::from(inst.total_work());
    Ok((state.next_op[job]..inst.n_machines())
        .map(|j| op_features(inst, &loads, total, job, j))
        .collect())
}

/// `((job_ready - min_ready) / scale, (machine_free - min_free) / scale,
/// remaining work / total work, remaining ops / m)` where `scale` is the
/// largest job total, `min_ready` ranges over unfinished jobs, `min_free`
/// over all machines, and `machine_free` is that of the job's next machine.
/// The clock terms are clamped to `[0, 1]`.
pub fn dynamic_features(
    inst: &Instance,
    state: &ScheduleState,
    job: usize,
) -> Result<[f64; DYNAMIC_DIM]> {
    if job >= state.n_jobs() || state.is_finished(job) {
        return Err(Error::IllegalAction {
            job,
            reason: "job is finished",
        });
    }
    let ctx = DynamicContext::new(inst, state);
    Ok(ctx.features(inst, state, job))
}

struct DynamicContext {
    min_ready: u32,
    min_free: u32,
    scale: f64,
    total: f64,
}

impl DynamicContext {
    fn new(inst: &Instance, state: &ScheduleState) -> Self {
        let min_ready = (0..state.n_jobs())
            .filter(|&i| !state.is_finished(i))
            .map(|i| state.job_ready[i])
            .min();
        let scale = (0..inst.n_jobs())
            .map(|i| inst.job_total(i))
            .max()
            .unwrap_or(1)
            .max(1);
        Self {
            min_ready: min_ready.unwrap_or(0),
            min_free: state.machine_free.iter().copied().min().unwrap_or(0),
            scale: f64::from(scale),
            total: f64::from(inst.total_work().max(1)),
        }
    }

    fn features(&self, inst: &Instance, state: &ScheduleState, job: usize) -> [f64; DYNAMIC_DIM] {
        let m = inst.n_machines();
        let machine = inst.op(job, state.next_op[job]).machine;
        let clock =
            |t: u32, floor: u32| (f64::from(t.saturating_sub(floor)) / self.scale).clamp(0.0, 1.0);
        [
            clock(state.job_ready[job], self.min_ready),
            clock(state.machine_free[machine], self.min_free),
            f64::from(state.remaining_work[job]) / self.total,
            state.remaining_ops(job) as f64 / m as f64,
        ]
    }
}

/// Dynamic feature rows of the listed jobs.
fn dynamic_matrix<S: Scalar>(inst: &Instance, state: &ScheduleState, jobs: &[usize]) -> Tensor<S> {
    let ctx = DynamicContext::new(inst, state);
    let data = jobs
        .iter()
        .flat_map(|&j| ctx.features(inst, state, j))
        .map(S::lit)
        .collect();
    Tensor::from_vec(jobs.len(), DYNAMIC_DIM, data).expect("length matches")
}

/// Tape handles of every network weight.
#[derive(Clone, Debug)]
pub struct NetVars {
    encoder: LstmVars,
    set2set: LstmVars,
    actor_emb: Var,
    actor_dyn: Var,
    actor_ctx: Var,
    actor_b1: Var,
    actor_out: Var,
    actor_b_out: Var,
    critic_ctx: Var,
    critic_dyn: Var,
    critic_b1: Var,
    critic_out: Var,
    critic_b_out: Var,
    pub params: ParamVars,
}

/// Output of one recorded decision.
#[derive(Clone, Debug)]
pub struct StepVars {
    /// Unfinished jobs in increasing index order.
    pub legal: Vec<usize>,
    /// `1 x legal.len()` log-probabilities.
    pub log_probs: Var,
    /// `1 x 1` critic output in units of the instance's lower bound.
    pub value: Var,
}

/// The actor-critic network and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet<S> {
    config: PolicyConfig,
    params: ParamStore<S>,
}

impl<S: Scalar> PolicyNet<S> {
    /// Fresh network with uniform(±1/sqrt(fan_in)) weights, zero biases and
    /// forget-gate biases of one.
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        add_lstm_params(&mut p, "encoder", STATIC_DIM, d, &mut rng)?;
        add_lstm_params(&mut p, "set2set", 2 * d, d, &mut rng)?;
        p.add("actor.w_emb", uniform_init(d, d, &mut rng))?;
        p.add("actor.w_dyn", uniform_init(DYNAMIC_DIM, d, &mut rng))?;
        p.add("actor.w_ctx", uniform_init(2 * d, d, &mut rng))?;
        p.add("actor.b1", Tensor::zeros(1, d))?;
        p.add("actor.w_out", uniform_init(d, 1, &mut rng))?;
        p.add("actor.b_out", Tensor::zeros(1, 1))?;
        p.add("critic.w_ctx", uniform_init(2 * d, d, &mut rng))?;
        p.add("critic.w_dyn", uniform_init(DYNAMIC_DIM, d, &mut rng))?;
        p.add("critic.b1", Tensor::zeros(1, d))?;
        p.add("critic.w_out", uniform_init(d, 1, &mut rng))?;
        p.add("critic.b_out", Tensor::zeros(1, 1))?;
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: PolicyConfig, params: ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let reference = PolicyNet::<S>::new(config, 0)?;
        if reference.params.names() != params.names() {
            return Err(Error::Checkpoint(
                "parameter names do not match the architecture".into(),
            ));
        }
        for (a, b) in reference.params.tensors().iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape {:?} where {:?} expected",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn cast<T: Scalar>(&self) -> PolicyNet<T> {
        PolicyNet {
            config: self.config,
            params: self.params.cast(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let meta = [
            c.embed_dim,
            c.set2set_steps,
            c.static_feature_dim,
            c.dynamic_feature_dim,
        ];
        Checkpoint {
            params: self.params.cast(),
            metadata: vec![(
                CONFIG_RECORD.into(),
                Tensor::row_vector(meta.iter().map(|&v| v as f32).collect()),
            )],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt
            .meta(CONFIG_RECORD)
            .ok_or_else(|| Error::Checkpoint("missing meta.config record".into()))?;
        let v: Vec<usize> = meta.data().iter().map(|&x| x as usize).collect();
        let [embed_dim, set2set_steps, static_feature_dim, dynamic_feature_dim] = v[..] else {
            return Err(Error::Checkpoint(format!(
                "meta.config has {} entries",
                v.len()
            )));
        };
        let config = PolicyConfig {
            embed_dim,
            set2set_steps,
            static_feature_dim,
            dynamic_feature_dim,
        };
        Self::from_params(config, ckpt.params.cast())
    }

    /// Resolves named weights among `params`, which must follow this
    /// network's parameter layout.
    pub fn vars(&self, params: ParamVars) -> Result<NetVars> {
        let p = &self.params;
        let get = |name: &str| -> Result<Var> {
            let id = p
                .id(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            Ok(params.get(id))
        };
        Ok(NetVars {
            encoder: LstmVars::lookup(p, &params, "encoder")?,
            set2set: LstmVars::lookup(p, &params, "set2set")?,
            actor_emb: get("actor.w_emb")?,
            actor_dyn: get("actor.w_dyn")?,
            actor_ctx: get("actor.w_ctx")?,
            actor_b1: get("actor.b1")?,
            actor_out: get("actor.w_out")?,
            actor_b_out: get("actor.b_out")?,
            critic_ctx: get("critic.w_ctx")?,
            critic_dyn: get("critic.w_dyn")?,
            critic_b1: get("critic.b1")?,
            critic_out: get("critic.w_out")?,
            critic_b_out: get("critic.b_out")?,
            params,
        })
    }

    /// Loads the parameters onto `tape` (borrowed, not copied).
    pub fn load<'a>(&'a self, tape: &mut Tape<'a, S>) -> Result<NetVars> {
        let params = tape.load_params(&self.params);
        self.vars(params)
    }

    /// Reverse LSTM over every job. Entry `j` of the result is `n x d` and
    /// holds each job's embedding when its next operation is `j`; entry `m`
    /// is all zeros.
    pub fn encode_static(
        &self,
        tape: &mut Tape<'_, S>,
        v: &NetVars,
        inst: &Instance,
    ) -> Result<Vec<Var>> {
        let (n, m, d) = (inst.n_jobs(), inst.n_machines(), self.config.embed_dim);
        let loads = inst.machine_loads();
        let total = f64::from(inst.total_work().max(1));
        let zeros = tape.constant(Tensor::zeros(n, d));
        let mut hidden = vec![zeros; m + 1];
        let mut c = zeros;
        for j in (0..m).rev() {
            let data = (0..n)
                .flat_map(|i| op_features(inst, &loads, total, i, j))
                .map(S::lit)
                .collect();
            let x = tape.constant(Tensor::from_vec(n, STATIC_DIM, data)?);
            let (h, c_next) = lstm_cell(tape, x, hidden[j + 1], c, &v.encoder)?;
            hidden[j] = h;
            c = c_next;
        }
        Ok(hidden)
    }

    /// Records one decision given the embedding rows of the unfinished jobs.
    fn head(
        &self,
        tape: &mut Tape<'_, S>,
        v: &NetVars,
        embeddings: Var,
        dynamic: Tensor<S>,
    ) -> Result<(Var, Var)> {
        let mean_dyn = canonical_mean_rows(&dynamic);
        let dynamic = tape.constant(dynamic);
        let ctx = set2set(tape, embeddings, &v.set2set, self.config.set2set_steps)?;

        let e = tape.matmul(embeddings, v.actor_emb)?;
        let dd = tape.matmul(dynamic, v.actor_dyn)?;
        let hidden = tape.add(e, dd)?;
        let ctx_row = dense_forward(tape, ctx, v.actor_ctx, v.actor_b1)?;
        let hidden = tape.add_row(hidden, ctx_row)?;
        let hidden = tape.tanh(hidden);
        let logits = dense_forward(tape, hidden, v.actor_out, v.actor_b_out)?;
        let logits = tape.transpose(logits);
        let log_probs = tape.log_softmax(logits);

        // The critic reads the context without moving it.
        let ctx_fixed = tape.detach(ctx);
        let mean_dyn = tape.constant(mean_dyn);
        let c = tape.matmul(ctx_fixed, v.critic_ctx)?;
        let cd = dense_forward(tape, mean_dyn, v.critic_dyn, v.critic_b1)?;
        let c = tape.add(c, cd)?;
        let c = tape.tanh(c);
        let value = dense_forward(tape, c, v.critic_out, v.critic_b_out)?;
        Ok((log_probs, value))
    }

    /// Records the decision at `state` on `tape`.
    pub fn step(
        &self,
        tape: &mut Tape<'_, S>,
        v: &NetVars,
        inst: &Instance,
        state: &ScheduleState,
        hidden: &[Var],
    ) -> Result<StepVars> {
        let legal = state.legal_actions();
        if legal.is_empty() {
            return Err(Error::Terminal);
        }
        let picks: Vec<(Var, usize)> = legal
            .iter()
            .map(|&i| (hidden[state.next_op[i]], i))
            .collect();
        let embeddings = tape.gather_rows(&picks)?;
        let dynamic = dynamic_matrix(inst, state, &legal);
        let (log_probs, value) = self.head(tape, v, embeddings, dynamic)?;
        Ok(StepVars {
            legal,
            log_probs,
            value,
        })
    }

    /// Action probabilities and value at `state`.
    pub fn forward(&self, inst: &Instance, state: &ScheduleState) -> Result<PolicyOutput> {
        self.bind(inst)?.output(state)
    }

    /// Precomputes the static embeddings of `inst` for repeated decisions.
    pub fn bind<'n>(&'n self, inst: &'n Instance) -> Result<BoundNet<'n, S>> {
        let mut tape = Tape::new();
        let v = self.load(&mut tape)?;
        let hidden = self.encode_static(&mut tape, &v, inst)?;
        let hidden = hidden.iter().map(|&h| tape.value(h).clone()).collect();
        Ok(BoundNet {
            net: self,
            inst,
            hidden,
            value_scale: f64::from(lower_bound(inst)),
        })
    }
}

/// A network paired with one instance and its cached static embeddings.
pub struct BoundNet<'n, S: Scalar> {
    net: &'n PolicyNet<S>,
    inst: &'n Instance,
    hidden: Vec<Tensor<S>>,
    value_scale: f64,
}

impl<S: Scalar> BoundNet<'_, S> {
    pub fn instance(&self) -> &Instance {
        self.inst
    }

    pub fn output(&self, state: &ScheduleState) -> Result<PolicyOutput> {
        let legal = state.legal_actions();
        if legal.is_empty() {
            return Err(Error::Terminal);
        }
        let d = self.net.config.embed_dim;
        let mut rows = Vec::with_capacity(legal.len() * d);
        for &i in &legal {
            rows.extend_from_slice(self.hidden[state.next_op[i]].row(i));
        }
        let mut tape = Tape::new();
        let v = self.net.load(&mut tape)?;
        let embeddings = tape.constant(Tensor::from_vec(legal.len(), d, rows)?);
        let dynamic = dynamic_matrix(self.inst, state, &legal);
        let (log_probs, value) = self.net.head(&mut tape, &v, embeddings, dynamic)?;
        let logits: Vec<S> = tape.value(log_probs).data().to_vec();
        let p = masked_softmax(&logits, None)?;
        let mut probs = vec![0.0; state.n_jobs()];
        for (&i, pi) in legal.iter().zip(p) {
            probs[i] = pi.to_f64_lossless();
        }
        let value = tape.value(value).item().to_f64_lossless() * self.value_scale;
        if !value.is_finite() || probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("policy output".into()));
        }
        Ok(PolicyOutput { probs, value })
    }
}
