//! Scripted curriculum runs with hand-computed expected trajectories.

use jsp_core::curriculum::{
    next_level_ascl, next_level_rascl, CurriculumParams, CurriculumState, LevelEvent,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Event = (usize, LevelEvent, usize);

fn params(u: usize, b: usize, t_opt: f64) -> CurriculumParams {
    CurriculumParams {
        u,
        b,
        t_opt,
        patience: 3000,
        ..CurriculumParams::default()
    }
}

/// Feeds `gap(iter, level)` into the visited levels at every check and
/// records every event as `(iteration, event, training level)`.
fn run(
    n_levels: usize,
    p: CurriculumParams,
    until: usize,
    rascl: bool,
    gap: impl Fn(usize, usize) -> f64,
) -> Vec<Event> {
    let mut s = CurriculumState::new(n_levels, p);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();
    for iter in 0..=until {
        s.iter = iter;
        if iter > 0 && iter % p.u == 0 {
            for l in 0..=s.level {
                s.gaps[l] = gap(iter, l);
            }
        }
        let event = if rascl {
            next_level_rascl(&mut s, &mut rng).unwrap()
        } else {
            next_level_ascl(&mut s)
        };
        if let Some(e) = event {
            assert!(s.train_level <= s.level, "trained above the frontier");
            out.push((iter, e, s.train_level));
        }
        if s.finished {
            break;
        }
    }
    out
}

fn stays(from: usize, to: usize, level: usize) -> Vec<Event> {
    (from..=to)
        .step_by(100)
        .map(|i| (i, LevelEvent::Stay, level))
        .collect()
}

/// Level 0 closes immediately, level 1 never does: advance, wait out the
/// patience, step back, advance again.
pub fn ascl_scenario() -> Result<(), String> {
    let got = run(3, params(100, 100, 3.0), 3300, false, |_, l| {
        if l == 0 {
            2.9
        } else {
            5.0
        }
    });
    let mut want = vec![(100, LevelEvent::Advance, 1)];
    want.extend(stays(200, 3000, 1));
    want.push((3100, LevelEvent::Back, 0));
    want.push((3200, LevelEvent::Advance, 1));
    want.push((3300, LevelEvent::Stay, 1));
    compare("ascl", &got, &want)
}

/// Advance, two resampling rounds while level 1 is open, advance when it
/// closes, then stop once the top level closes.
pub fn rascl_scenario() -> Result<(), String> {
    let got = run(3, params(100, 200, 3.0), 5000, true, |iter, l| match l {
        0 => 1.0,
        1 if iter < 600 => 6.0,
        _ => 2.0,
    });
    let kinds: Vec<(usize, LevelEvent)> = got.iter().map(|&(i, e, _)| (i, e)).collect();
    let want = vec![
        (100, LevelEvent::Advance),
        (200, LevelEvent::Sample),
        (300, LevelEvent::Stay),
        (400, LevelEvent::Sample),
        (500, LevelEvent::Stay),
        (600, LevelEvent::Advance),
        (700, LevelEvent::Terminate),
    ];
    if kinds != want {
        return Err(format!("rascl trajectory {kinds:?}, expected {want:?}"));
    }
    if got[5].2 != 2 {
        return Err(format!(
            "rascl trains on level {} after advancing",
            got[5].2
        ));
    }
    Ok(())
}

/// RASCL's patience rule: an open frontier for 3000 iterations steps back.
pub fn rascl_patience_scenario() -> Result<(), String> {
    let got = run(2, params(100, 100, 3.0), 3200, true, |_, l| {
        if l == 0 {
            1.0
        } else {
            6.0
        }
    });
    let backs: Vec<usize> = got
        .iter()
        .filter(|e| e.1 == LevelEvent::Back)
        .map(|e| e.0)
        .collect();
    let advances: Vec<usize> = got
        .iter()
        .filter(|e| e.1 == LevelEvent::Advance)
        .map(|e| e.0)
        .collect();
    if backs != [3100] || advances != [100, 3200] {
        return Err(format!("backs {backs:?}, advances {advances:?}"));
    }
    Ok(())
}

fn compare(name: &str, got: &[Event], want: &[Event]) -> Result<(), String> {
    if got == want {
        return Ok(());
    }
    let first = got
        .iter()
        .zip(want)
        .position(|(a, b)| a != b)
        .unwrap_or(got.len().min(want.len()));
    Err(format!(
        "{name}: trajectories differ at event {first}: got {:?}, expected {:?}",
        got.get(first),
        want.get(first)
    ))
}

/// Draws the training level `draws` times at resampling iterations with the
/// frontier at the top of `gaps`; returns the counts per level.
pub fn rascl_draws(gaps: &[f64], draws: usize, seed: u64) -> Vec<usize> {
    let p = params(100, 100, 0.5);
    let mut s = CurriculumState::new(gaps.len(), p);
    s.level = gaps.len() - 1;
    s.gaps = gaps.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; gaps.len()];
    for k in 0..draws {
        // Every draw is a check with the frontier open, so only resampling moves the level.
        s.iter = 100 * (k % 20) + 100;
        s.last_advance_iter = s.iter;
        let e = next_level_rascl(&mut s, &mut rng).unwrap();
        assert_eq!(e, Some(LevelEvent::Sample));
        counts[s.train_level] += 1;
    }
    counts
}

/// Pearson statistic of `counts` against probabilities `probs`.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}
