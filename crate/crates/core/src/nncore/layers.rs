//! Layers recorded on a [`Tape`].

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};

use super::params::{uniform_init, ParamStore};
use super::scalar::Scalar;
use super::tape::{ParamVars, Tape, Var};
use super::tensor::Tensor;

/// `y = x W + b` with `b` broadcast over rows.
pub fn dense_forward<S: Scalar>(tape: &mut Tape<'_, S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Tape handles of one LSTM cell's weights. Gates are packed `[i, f, g, o]`
/// along the columns: `wx` is `in x 4h`, `wh` is `h x 4h`, `b` is `1 x 4h`.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn lookup<S: Scalar>(
        store: &ParamStore<S>,
        vars: &ParamVars,
        prefix: &str,
    ) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .id(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| Error::Config(format!("missing parameter `{prefix}.{suffix}`")))
        };
        let b = get("b")?;
        Ok(Self {
            wx: vars.get(get("wx")?),
            wh: vars.get(get("wh")?),
            b: vars.get(b),
            hidden: store.get(b).cols() / 4,
        })
    }
}

/// Adds `{prefix}.wx`, `{prefix}.wh` and `{prefix}.b` with the forget-gate bias set to one.
pub fn add_lstm_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    store.add(format!("{prefix}.wx"), uniform_init(input, 4 * hidden, rng))?;
    store.add(
        format!("{prefix}.wh"),
        uniform_init(hidden, 4 * hidden, rng),
    )?;
    let mut b = Tensor::zeros(1, 4 * hidden);
    for v in &mut b.data_mut()[hidden..2 * hidden] {
        *v = S::one();
    }
    store.add(format!("{prefix}.b"), b)?;
    Ok(())
}

/// One step of a standard LSTM for a batch of rows.
pub fn lstm_cell<S: Scalar>(
    tape: &mut Tape<'_, S>,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let hd = p.hidden;
    let zx = tape.matmul(x, p.wx)?;
    let zh = tape.matmul(h, p.wh)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_row(z, p.b)?;
    let i = tape.slice_cols(z, 0, hd)?;
    let f = tape.slice_cols(z, hd, hd)?;
    let g = tape.slice_cols(z, 2 * hd, hd)?;
    let o = tape.slice_cols(z, 3 * hd, hd)?;
    let (i, f, g, o) = (
        tape.sigmoid(i),
        tape.sigmoid(f),
        tape.tanh(g),
        tape.sigmoid(o),
    );
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Row order that depends only on the multiset of rows: lexicographic by
/// total order. Equal rows are interchangeable, so any tie order is fine.
pub fn canonical_row_order<S: Scalar>(t: &Tensor<S>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t.rows()).collect();
    order.sort_by(|&a, &b| {
        t.row(a)
            .iter()
            .zip(t.row(b))
            .map(|(x, y)| x.total_order(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Order-invariant readout of the rows of `set` (`k x d`): `steps` rounds of
/// query LSTM, dot-product attention over the set and attention-weighted sum.
/// Returns `q* = [h, r]` of shape `1 x 2d`. The query LSTM takes `2d` inputs
/// and has `d` hidden units.
pub fn set2set<S: Scalar>(
    tape: &mut Tape<'_, S>,
    set: Var,
    p: &LstmVars,
    steps: usize,
) -> Result<Var> {
    let t = tape.value(set);
    if t.rows() == 0 {
        return Err(Error::EmptySet);
    }
    let d = t.cols();
    if p.hidden != d {
        return Err(Error::Shape(format!(
            "set2set hidden {} for {d}-dim elements",
            p.hidden
        )));
    }
    let order = canonical_row_order(t);
    let picks: Vec<(Var, usize)> = order.into_iter().map(|r| (set, r)).collect();
    let memory = tape.gather_rows(&picks)?;
    let mut h = tape.constant(Tensor::zeros(1, d));
    let mut c = tape.constant(Tensor::zeros(1, d));
    let mut q = tape.constant(Tensor::zeros(1, 2 * d));
    for _ in 0..steps {
        (h, c) = lstm_cell(tape, q, h, c, p)?;
        let e = tape.matmul_t(h, memory)?;
        let a = tape.softmax(e);
        let r = tape.matmul(a, memory)?;
        q = tape.concat_cols(&[h, r])?;
    }
    Ok(q)
}

/// Column means computed with order-independent sums.
pub fn canonical_mean_rows<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let k = S::lit(t.rows() as f64);
    let cols: Vec<S> = (0..t.cols())
        .map(|c| {
            let column: Vec<S> = (0..t.rows()).map(|r| t.get(r, c)).collect();
            super::scalar::canonical_sum(&column) / k
        })
        .collect();
    Tensor::row_vector(cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lstm_store(input: usize, hidden: usize, seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        add_lstm_params(
            &mut s,
            "cell",
            input,
            hidden,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        s
    }

    #[test]
    fn dense_identity_and_zero_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let eye = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let zero_b = tape.constant(Tensor::zeros(1, 2));
        let y = dense_forward(&mut tape, x, eye, zero_b).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let z = tape.constant(Tensor::zeros(1, 2));
        let b = tape.constant(Tensor::row_vector(vec![0.5, -1.5]));
        let y = dense_forward(&mut tape, z, eye, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.5]);
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut s = lstm_store(3, 4, 0);
        let n = s.n_scalars();
        s.set_flat(&vec![0.0; n]).unwrap();
        let mut tape = Tape::new();
        let vars = tape.load_params(&s);
        let p = LstmVars::lookup(&s, &vars, "cell").unwrap();
        let x = tape.constant(Tensor::row_vector(vec![1.0, -2.0, 0.5]));
        let h = tape.constant(Tensor::zeros(1, 4));
        let c = tape.constant(Tensor::zeros(1, 4));
        let (h1, c1) = lstm_cell(&mut tape, x, h, c, &p).unwrap();
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forget_bias_is_one() {
        let s = lstm_store(2, 3, 1);
        let b = s.get(s.id("cell.b").unwrap());
        assert_eq!(b.data(), &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn set2set_singleton_and_empty() {
        let s = lstm_store(4, 2, 3);
        let mut tape = Tape::new();
        let vars = tape.load_params(&s);
        let p = LstmVars::lookup(&s, &vars, "cell").unwrap();
        let set = tape.constant(Tensor::row_vector(vec![0.3, -0.7]));
        let q = set2set(&mut tape, set, &p, 2).unwrap();
        // With one element the read vector is that element.
        assert_eq!(&tape.value(q).data()[2..], &[0.3, -0.7]);
        let empty = tape.constant(Tensor::zeros(0, 2));
        assert!(matches!(
            set2set(&mut tape, empty, &p, 2),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn mean_rows_ignores_order() {
        let a = Tensor::from_rows(&[&[0.1f32, 2.0], &[0.7, -1.0], &[1e-3, 5.5]]).unwrap();
        let b = Tensor::from_rows(&[&[0.7f32, -1.0], &[1e-3, 5.5], &[0.1, 2.0]]).unwrap();
        assert_eq!(canonical_mean_rows(&a), canonical_mean_rows(&b));
    }
}
