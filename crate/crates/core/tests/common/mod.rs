//! Helpers shared by the integration tests and the acceptance runner. They
//! deliberately avoid the crate's own simulator so they can act as oracles.

#![allow(dead_code)]

pub mod curriculum;

use jsp_core::env::ScheduleState;
use jsp_core::nncore::gradcheck::{check_params, max_relative_error, numeric_gradient};
use jsp_core::nncore::layers::add_lstm_params;
use jsp_core::nncore::{
    dense_forward, lstm_cell, set2set, LstmVars, ParamStore, ParamVars, Tape, Tensor, Var,
};
use jsp_core::policy::{PolicyConfig, PolicyNet};
use jsp_core::{Instance, Time};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Checks precedence, machine exclusivity and start-time sanity of a
/// schedule given as `start[job][op]`; returns its makespan.
pub fn check_schedule(inst: &Instance, start: &[Vec<Time>]) -> Result<Time, String> {
    let (n, m) = (inst.n_jobs(), inst.n_machines());
    if start.len() != n || start.iter().any(|r| r.len() != m) {
        return Err("schedule shape".into());
    }
    let mut per_machine: Vec<Vec<(Time, Time)>> = vec![Vec::new(); m];
    let mut makespan = 0;
    for (i, row) in start.iter().enumerate() {
        let mut ready = 0;
        for (j, &s) in row.iter().enumerate() {
            let op = inst.op(i, j);
            if s < ready {
                return Err(format!("job {i} op {j} starts at {s} before {ready}"));
            }
            ready = s + op.duration;
            per_machine[op.machine].push((s, ready));
            makespan = makespan.max(ready);
        }
    }
    for (k, ops) in per_machine.iter_mut().enumerate() {
        ops.sort_unstable();
        for w in ops.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(format!("machine {k} overlaps at {}", w[1].0));
            }
        }
    }
    Ok(makespan)
}

/// Makespan of a dispatch sequence under append semantics, simulated from scratch.
pub fn simulate(inst: &Instance, seq: &[usize]) -> Time {
    let mut next = vec![0usize; inst.n_jobs()];
    let mut job_ready = vec![0 as Time; inst.n_jobs()];
    let mut machine_free = vec![0 as Time; inst.n_machines()];
    for &i in seq {
        let op = inst.op(i, next[i]);
        let end = job_ready[i].max(machine_free[op.machine]) + op.duration;
        job_ready[i] = end;
        machine_free[op.machine] = end;
        next[i] += 1;
    }
    job_ready.into_iter().max().unwrap_or(0)
}

/// Minimum makespan over every dispatch sequence, by plain enumeration.
pub fn enumerate_optimum(inst: &Instance) -> Time {
    fn go(inst: &Instance, left: &mut [usize], seq: &mut Vec<usize>, best: &mut Time) {
        if seq.len() == inst.n_operations() {
            *best = (*best).min(simulate(inst, seq));
            return;
        }
        for i in 0..left.len() {
            if left[i] > 0 {
                left[i] -= 1;
                seq.push(i);
                go(inst, left, seq, best);
                seq.pop();
                left[i] += 1;
            }
        }
    }
    let mut left = vec![inst.n_machines(); inst.n_jobs()];
    let mut best = Time::MAX;
    go(inst, &mut left, &mut Vec::new(), &mut best);
    best
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Reduces `y` to a scalar through fixed random weights so every entry
/// carries a distinct gradient.
fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Var {
    let t = tape.value(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    let w = random_tensor(&mut rng, t.rows(), t.cols());
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

fn store_of(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for &(name, r, c) in shapes {
        s.add(name, random_tensor(&mut rng, r, c)).unwrap();
    }
    s
}

fn var(store: &ParamStore<f64>, vars: &ParamVars, name: &str) -> Var {
    vars.get(store.id(name).unwrap())
}

pub const STEP: f64 = 1e-6;

/// Finite-difference checks of every tape primitive and layer.
/// Returns `(name, max relative error, tolerance)`.
pub fn primitive_checks(seed: u64) -> Vec<(&'static str, f64, f64)> {
    type Build = fn(&mut Tape<'_, f64>, &ParamVars, &ParamStore<f64>) -> Var;
    let two = [("a", 3, 4), ("b", 4, 2)];
    let same = [("a", 3, 4), ("b", 3, 4)];
    let cases: Vec<(&'static str, Vec<(&str, usize, usize)>, Build)> = vec![
        ("matmul", two.to_vec(), |t, v, s| {
            t.matmul(var(s, v, "a"), var(s, v, "b")).unwrap()
        }),
        ("matmul_t", same.to_vec(), |t, v, s| {
            t.matmul_t(var(s, v, "a"), var(s, v, "b")).unwrap()
        }),
        ("add", same.to_vec(), |t, v, s| {
            t.add(var(s, v, "a"), var(s, v, "b")).unwrap()
        }),
        ("sub", same.to_vec(), |t, v, s| {
            t.sub(var(s, v, "a"), var(s, v, "b")).unwrap()
        }),
        ("mul", same.to_vec(), |t, v, s| {
            t.mul(var(s, v, "a"), var(s, v, "b")).unwrap()
        }),
        ("add_row", vec![("a", 3, 4), ("b", 1, 4)], |t, v, s| {
            t.add_row(var(s, v, "a"), var(s, v, "b")).unwrap()
        }),
        ("scale", vec![("a", 3, 4)], |t, v, s| {
            t.scale(var(s, v, "a"), -1.7)
        }),
        ("sigmoid", vec![("a", 3, 4)], |t, v, s| {
            t.sigmoid(var(s, v, "a"))
        }),
        ("tanh", vec![("a", 3, 4)], |t, v, s| t.tanh(var(s, v, "a"))),
        ("slice_cols", vec![("a", 3, 5)], |t, v, s| {
            t.slice_cols(var(s, v, "a"), 1, 3).unwrap()
        }),
        ("concat_cols", vec![("a", 2, 3), ("b", 2, 2)], |t, v, s| {
            t.concat_cols(&[var(s, v, "a"), var(s, v, "b"), var(s, v, "a")])
                .unwrap()
        }),
        ("gather_rows", vec![("a", 4, 3), ("b", 2, 3)], |t, v, s| {
            let (a, b) = (var(s, v, "a"), var(s, v, "b"));
            t.gather_rows(&[(a, 2), (b, 1), (a, 0), (a, 2)]).unwrap()
        }),
        ("transpose", vec![("a", 3, 4)], |t, v, s| {
            t.transpose(var(s, v, "a"))
        }),
        ("softmax", vec![("a", 2, 5)], |t, v, s| {
            t.softmax(var(s, v, "a"))
        }),
        ("log_softmax", vec![("a", 2, 5)], |t, v, s| {
            t.log_softmax(var(s, v, "a"))
        }),
        ("pick", vec![("a", 3, 4)], |t, v, s| {
            let a = var(s, v, "a");
            let p = t.pick(a, 1, 2).unwrap();
            let q = t.pick(a, 2, 0).unwrap();
            let pq = t.mul(p, q).unwrap();
            t.add(pq, p).unwrap()
        }),
        ("sum", vec![("a", 3, 4)], |t, v, s| {
            let a = var(s, v, "a");
            let sq = t.mul(a, a).unwrap();
            t.sum(sq)
        }),
        (
            "dense",
            vec![("x", 3, 4), ("w", 4, 5), ("b", 1, 5)],
            |t, v, s| dense_forward(t, var(s, v, "x"), var(s, v, "w"), var(s, v, "b")).unwrap(),
        ),
    ];
    let mut out = Vec::new();
    for (k, (name, shapes, build)) in cases.into_iter().enumerate() {
        let store = store_of(seed * 100 + k as u64, &shapes);
        let check = check_params(&store, STEP, |t, v, s| {
            let y = build(t, v, s);
            Ok(weighted_sum(t, y, seed))
        })
        .unwrap();
        out.push((name, check.max_rel_error, 1e-4));
    }
    out.push(("lstm_cell", lstm_check(seed, 1), 1e-4));
    out.push(("lstm_3_steps", lstm_check(seed, 3), 1e-3));
    out.push(("set2set", set2set_check(seed), 1e-3));
    out
}

fn lstm_store(seed: u64, input: usize, hidden: usize) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    add_lstm_params(&mut s, "cell", input, hidden, &mut rng).unwrap();
    // Non-zero biases exercise every gate path.
    let id = s.id("cell.b").unwrap();
    *s.get_mut(id) = random_tensor(&mut rng, 1, 4 * hidden);
    s.add("x", random_tensor(&mut rng, 2, input)).unwrap();
    s.add("h0", random_tensor(&mut rng, 2, hidden)).unwrap();
    s.add("c0", random_tensor(&mut rng, 2, hidden)).unwrap();
    s
}

fn lstm_check(seed: u64, steps: usize) -> f64 {
    let store = lstm_store(seed, 3, 4);
    check_params(&store, STEP, |t, v, s| {
        let p = LstmVars::lookup(s, v, "cell")?;
        let x = var(s, v, "x");
        let (mut h, mut c) = (var(s, v, "h0"), var(s, v, "c0"));
        for _ in 0..steps {
            (h, c) = lstm_cell(t, x, h, c, &p)?;
        }
        let hc = t.concat_cols(&[h, c])?;
        Ok(weighted_sum(t, hc, seed))
    })
    .unwrap()
    .max_rel_error
}

fn set2set_check(seed: u64) -> f64 {
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    add_lstm_params(&mut store, "s2s", 2 * d, d, &mut rng).unwrap();
    store.add("set", random_tensor(&mut rng, 4, d)).unwrap();
    check_params(&store, STEP, |t, v, s| {
        let p = LstmVars::lookup(s, v, "s2s")?;
        let q = set2set(t, var(s, v, "set"), &p, 2)?;
        Ok(weighted_sum(t, q, seed))
    })
    .unwrap()
    .max_rel_error
}

pub fn small_net(seed: u64) -> PolicyNet<f64> {
    PolicyNet::new(PolicyConfig::with_embed_dim(4), seed).unwrap()
}

/// Sum of `log pi(a_t)` along `actions`, recorded on `tape`.
pub fn log_likelihood<'a>(
    net: &PolicyNet<f64>,
    tape: &mut Tape<'a, f64>,
    vars: &ParamVars,
    inst: &Instance,
    actions: &[usize],
) -> jsp_core::Result<(Var, Vec<Var>)> {
    let v = net.vars(vars.clone())?;
    let hidden = net.encode_static(tape, &v, inst)?;
    let mut state = ScheduleState::new(inst);
    let mut total = tape.constant(Tensor::scalar(0.0));
    let mut values = Vec::new();
    for &a in actions {
        let out = net.step(tape, &v, inst, &state, &hidden)?;
        let k = out.legal.iter().position(|&j| j == a).unwrap();
        let lp = tape.pick(out.log_probs, 0, k)?;
        total = tape.add(total, lp)?;
        values.push(out.value);
        state.dispatch(inst, a)?;
    }
    Ok((total, values))
}

/// `sum_t (v_t - G_t / scale)^2` for a recorded episode.
pub fn critic_loss_var(
    tape: &mut Tape<'_, f64>,
    values: &[Var],
    returns: &[f64],
    scale: f64,
) -> jsp_core::Result<Var> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (&v, &g) in values.iter().zip(returns) {
        let target = tape.constant(Tensor::scalar(g / scale));
        let d = tape.sub(v, target)?;
        let sq = tape.mul(d, d)?;
        total = tape.add(total, sq)?;
    }
    Ok(total)
}

/// End-to-end checks of `log pi` along a random trajectory and of the critic
/// loss, on a small instance. The critic check covers the critic's own
/// weights, since the context it reads is detached; it also returns the
/// largest gradient that leaks into the other weights, which must be zero.
pub fn end_to_end_checks(seed: u64) -> Vec<(&'static str, f64, f64)> {
    let inst = jsp_core::instance::generate(2 + (seed % 2) as usize, 2, seed);
    let net = small_net(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = ScheduleState::new(&inst);
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    while !state.is_terminal() {
        let legal = state.legal_actions();
        let a = legal[rng.gen_range(0..legal.len())];
        rewards.push(state.dispatch(&inst, a).unwrap());
        actions.push(a);
    }
    let returns = jsp_core::trainer::returns(&rewards);
    let scale = f64::from(jsp_core::env::lower_bound(&inst));

    let actor = check_params(net.params(), STEP, |t, v, _| {
        Ok(log_likelihood(&net, t, v, &inst, &actions)?.0)
    })
    .unwrap();

    let critic_loss = |t: &mut Tape<'_, f64>, v: &ParamVars| -> jsp_core::Result<Var> {
        let (_, values) = log_likelihood(&net, t, v, &inst, &actions)?;
        critic_loss_var(t, &values, &returns, scale)
    };
    let store = net.params();
    let analytic = {
        let mut t = Tape::new();
        let v = t.load_params(store);
        let out = critic_loss(&mut t, &v).unwrap();
        t.backward_scalar(out).unwrap().params(&v, store)
    };
    let mut critic_a = Vec::new();
    let mut critic_n = Vec::new();
    let mut leak = 0.0f64;
    let mut probe = store.clone();
    for id in store.ids() {
        let g = analytic.get(id).data();
        if !store.name(id).starts_with("critic.") {
            leak = g.iter().fold(leak, |m, x| m.max(x.abs()));
            continue;
        }
        let base = store.get(id).data().to_vec();
        let n = numeric_gradient(&base, STEP, |x| {
            probe.get_mut(id).data_mut().copy_from_slice(x);
            let mut t = Tape::new();
            let v = t.load_params(&probe);
            let out = critic_loss(&mut t, &v)?;
            Ok(t.value(out).item())
        })
        .unwrap();
        probe.get_mut(id).data_mut().copy_from_slice(&base);
        critic_a.extend_from_slice(g);
        critic_n.extend(n);
    }
    vec![
        ("end_to_end_log_pi", actor.max_rel_error, 1e-3),
        (
            "end_to_end_critic",
            max_relative_error(&critic_a, &critic_n),
            1e-3,
        ),
        ("critic_leak_into_actor", leak, 0.0),
    ]
}

/// Random job permutation drawn from `rng`.
pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Compares the network's output on a random mid-episode state with its
/// output on the job-permuted copy, bit for bit.
pub fn equivariance_case(net: &PolicyNet<f32>, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (rng.gen_range(2..=8), rng.gen_range(2..=6));
    let inst = jsp_core::instance::generate(n, m, seed);
    let mut state = ScheduleState::new(&inst);
    let steps = rng.gen_range(0..inst.n_operations());
    for _ in 0..steps {
        let legal = state.legal_actions();
        state
            .dispatch(&inst, legal[rng.gen_range(0..legal.len())])
            .unwrap();
    }
    let perm = random_permutation(&mut rng, n);
    let base = net.bind(&inst).unwrap().output(&state).unwrap();
    let inst_p = inst.permute_jobs(&perm).unwrap();
    let state_p = state.permute_jobs(&perm).unwrap();
    let moved = net.bind(&inst_p).unwrap().output(&state_p).unwrap();
    for (k, &p) in perm.iter().enumerate() {
        if moved.probs[k].to_bits() != base.probs[p].to_bits() {
            return Err(format!(
                "seed {seed}: prob of job {p} is {} before and {} after",
                base.probs[p], moved.probs[k]
            ));
        }
    }
    if moved.value.to_bits() != base.value.to_bits() {
        return Err(format!(
            "seed {seed}: value {} became {}",
            base.value, moved.value
        ));
    }
    Ok(())
}
