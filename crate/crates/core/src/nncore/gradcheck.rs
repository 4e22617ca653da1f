//! Central finite-difference checks of tape gradients, in `f64`.

use crate::error::Result;

use super::params::ParamStore;
use super::tape::{ParamVars, Tape, Var};

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient(
    x: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Largest per-element `|a - n| / max(|a|, |n|, floor)` where `floor` is
/// `1e-3` times the largest gradient magnitude. The floor keeps entries that
/// are zero up to rounding from dominating the comparison.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

/// Compares the tape gradient of the `1 x 1` output of `f` with respect to
/// every parameter of `store` against central differences with step `h`.
pub fn check_params<F>(store: &ParamStore<f64>, h: f64, f: F) -> Result<GradCheck>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &ParamVars, &'a ParamStore<f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars = tape.load_params(store);
        let out = f(&mut tape, &vars, store)?;
        tape.backward_scalar(out)?.params(&vars, store).flatten()
    };
    let mut probe = store.clone();
    let numeric = numeric_gradient(&store.flatten(), h, |flat| {
        probe.set_flat(flat)?;
        let mut tape = Tape::new();
        let vars = tape.load_params(&probe);
        let out = f(&mut tape, &vars, &probe)?;
        Ok(tape.value(out).item())
    })?;
    let max_rel_error = max_relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error,
    })
}
