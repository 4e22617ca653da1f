//! Reverse-mode differentiation over an explicitly recorded tape.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the indices of its inputs. Nodes only refer to earlier nodes, so a reverse
//! sweep over the tape visits each node after all of its consumers.
//! Parameter leaves borrow their values from a [`ParamStore`] instead of
//! copying them.

use std::borrow::Cow;

use crate::error::{Error, Result};

use super::params::{ParamGrads, ParamStore};
use super::scalar::{canonical_sum, Scalar};
use super::tensor::{matmul, matmul_t, t_matmul, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    Gather(Vec<(Var, usize)>),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick { src: Var, row: usize, col: usize },
    Sum(Var),
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Tape<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
}

/// Leaf variables of every parameter of a store, indexed like the store.
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn get(&self, id: super::params::ParamId) -> Var {
        self.0[id.index()]
    }
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is wanted.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed leaf whose gradient is wanted.
    pub fn borrowed(&mut self, value: &'a Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant copy of `v`'s value: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn load_params(&mut self, store: &'a ParamStore<S>) -> ParamVars {
        ParamVars(store.tensors().iter().map(|t| self.borrowed(t)).collect())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a x b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_t(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what} {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the `1 x c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                ta.shape(),
                tr.shape()
            )));
        }
        let c = ta.cols();
        let mut out = ta.clone();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(S::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        if start + len > t.cols() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(t.rows(), len, data)?;
        Ok(self.push(out, Op::SliceCols { src, start }, &[src]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols needs equal row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks the selected rows `(source, row)` into a new matrix.
    pub fn gather_rows(&mut self, picks: &[(Var, usize)]) -> Result<Var> {
        let Some(&(first, _)) = picks.first() else {
            return Err(Error::Shape("gather_rows needs at least one row".into()));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::with_capacity(picks.len() * cols);
        for &(src, row) in picks {
            let t = self.value(src);
            if t.cols() != cols || row >= t.rows() {
                return Err(Error::Shape(format!("gather row {row} of {:?}", t.shape())));
            }
            data.extend_from_slice(t.row(row));
        }
        let out = Tensor::from_vec(picks.len(), cols, data)?;
        let parents: Vec<Var> = picks.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::Gather(picks.to_vec()), &parents))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            let p = masked_softmax(t.row(r), None).expect("no mask");
            out.data_mut()[r * t.cols()..(r + 1) * t.cols()].copy_from_slice(&p);
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            let row = t.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&x| (x - max).exp()).collect();
            let lse = max + canonical_sum(&exps).ln();
            for (o, &x) in out.data_mut()[r * t.cols()..(r + 1) * t.cols()]
                .iter_mut()
                .zip(row)
            {
                *o = x - lse;
            }
        }
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    /// The `1 x 1` element at `(row, col)`.
    pub fn pick(&mut self, src: Var, row: usize, col: usize) -> Result<Var> {
        let t = self.value(src);
        if row >= t.rows() || col >= t.cols() {
            return Err(Error::Shape(format!(
                "pick ({row},{col}) of {:?}",
                t.shape()
            )));
        }
        let out = Tensor::scalar(t.get(row, col));
        Ok(self.push(out, Op::Pick { src, row, col }, &[src]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .copied()
            .fold(S::zero(), |x, y| x + y);
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Reverse sweep seeded with `d output / d seed.0 = seed.1`.
    pub fn backward(&self, seeds: &[(Var, Tensor<S>)]) -> Result<Gradients<S>> {
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape() != self.value(*v).shape() {
                return Err(Error::Shape(format!(
                    "seed {:?} for node of shape {:?}",
                    g.shape(),
                    self.value(*v).shape()
                )));
            }
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradient of a `1 x 1` node with respect to everything before it.
    pub fn backward_scalar(&self, v: Var) -> Result<Gradients<S>> {
        self.backward(&[(v, Tensor::scalar(S::one()))])
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let y = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, matmul_t(g, self.value(*b))?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, t_matmul(self.value(*a), g)?);
                }
            }
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, matmul(g, self.value(*b))?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, t_matmul(g, self.value(*a))?);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*row) {
                    let mut sum = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in sum.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(grads, *row, sum);
                }
            }
            Op::Scale(a, factor) => accumulate(grads, *a, g.map(|x| x * *factor)),
            Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(y, |gx, s| gx * s * (S::one() - s))),
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(y, |gx, t| gx * (S::one() - t * t))),
            Op::SliceCols { src, start } => {
                let t = self.value(*src);
                let mut full = Tensor::zeros(t.rows(), t.cols());
                let len = g.cols();
                for r in 0..g.rows() {
                    full.data_mut()[r * t.cols() + start..r * t.cols() + start + len]
                        .copy_from_slice(g.row(r));
                }
                accumulate(grads, *src, full);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.wants(p) {
                        let mut part = Vec::with_capacity(g.rows() * cols);
                        for r in 0..g.rows() {
                            part.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(grads, p, Tensor::from_vec(g.rows(), cols, part)?);
                    }
                    offset += cols;
                }
            }
            Op::Gather(picks) => {
                for (k, &(src, row)) in picks.iter().enumerate() {
                    if !self.wants(src) {
                        continue;
                    }
                    let t = self.value(src);
                    let slot =
                        grads[src.0].get_or_insert_with(|| Tensor::zeros(t.rows(), t.cols()));
                    let c = t.cols();
                    for (o, &x) in slot.data_mut()[row * c..(row + 1) * c]
                        .iter_mut()
                        .zip(g.row(k))
                    {
                        *o += x;
                    }
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Softmax(a) => {
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = yr
                        .iter()
                        .zip(gr)
                        .fold(S::zero(), |acc, (&p, &q)| acc + p * q);
                    for (c, o) in dx.data_mut()[r * y.cols()..(r + 1) * y.cols()]
                        .iter_mut()
                        .enumerate()
                    {
                        *o = yr[c] * (gr[c] - inner);
                    }
                }
                accumulate(grads, *a, dx);
            }
            Op::LogSoftmax(a) => {
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let total = gr.iter().copied().fold(S::zero(), |acc, x| acc + x);
                    for (c, o) in dx.data_mut()[r * y.cols()..(r + 1) * y.cols()]
                        .iter_mut()
                        .enumerate()
                    {
                        *o = gr[c] - yr[c].exp() * total;
                    }
                }
                accumulate(grads, *a, dx);
            }
            Op::Pick { src, row, col } => {
                let t = self.value(*src);
                let slot = grads[src.0].get_or_insert_with(|| Tensor::zeros(t.rows(), t.cols()));
                slot.data_mut()[row * t.cols() + col] += g.item();
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                accumulate(grads, *a, Tensor::full(t.rows(), t.cols(), g.item()));
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Softmax of one row with max subtraction. Masked entries (`mask[i] ==
/// false`) get exactly zero. The normalizer is summed in canonical order so
/// permuting the inputs permutes the outputs bit for bit.
pub fn masked_softmax<S: Scalar>(logits: &[S], mask: Option<&[bool]>) -> Result<Vec<S>> {
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::Shape(format!(
                "mask of {} for {} logits",
                m.len(),
                logits.len()
            )));
        }
    }
    let max = (0..logits.len())
        .filter(|&i| keep(i))
        .map(|i| logits[i])
        .fold(None, |acc: Option<S>, x| Some(acc.map_or(x, |a| a.max(x))))
        .ok_or(Error::AllMasked)?;
    let exps: Vec<S> = (0..logits.len())
        .map(|i| {
            if keep(i) {
                (logits[i] - max).exp()
            } else {
                S::zero()
            }
        })
        .collect();
    let total = canonical_sum(&exps);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Result of [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients in store order; unused parameters get zeros.
    pub fn params(&self, vars: &ParamVars, store: &ParamStore<S>) -> ParamGrads<S> {
        let mut out = ParamGrads::zeros_like(store);
        self.add_params_into(vars, &mut out);
        out
    }

    pub fn add_params_into(&self, vars: &ParamVars, out: &mut ParamGrads<S>) {
        for (i, v) in vars.0.iter().enumerate() {
            if let Some(g) = self.wrt(*v) {
                out.tensors_mut()[i].add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_masks_and_normalizes() {
        let p = masked_softmax(&[1.0f64, 1.0, 1.0], None).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = masked_softmax(&[5.0f64, 0.0], Some(&[true, false])).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(matches!(
            masked_softmax(&[1.0f64], Some(&[false])),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.3f64, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 7.5).collect();
        let (a, b) = (
            masked_softmax(&z, None).unwrap(),
            masked_softmax(&shifted, None).unwrap(),
        );
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
        let total: f64 = a.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_is_permutation_exact() {
        let z = [0.31f32, -1.7, 2.25, 0.003, 1.1];
        let p = masked_softmax(&z, None).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let zp: Vec<f32> = perm.iter().map(|&i| z[i]).collect();
        let pp = masked_softmax(&zp, None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(pp[k].to_bits(), p[i].to_bits());
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chain_rule_on_small_graph() {
        // f(x) = sum(tanh(x) * x)
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::row_vector(vec![0.5, -1.0]));
        let t = tape.tanh(x);
        let p = tape.mul(t, x).unwrap();
        let s = tape.sum(p);
        let g = tape.backward_scalar(s).unwrap();
        let dx = g.wrt(x).unwrap();
        for (i, &xv) in [0.5f64, -1.0].iter().enumerate() {
            let expected = xv.tanh() + xv * (1.0 - xv.tanh().powi(2));
            assert!((dx.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward_scalar(y).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().item(), 2.0);
    }

    #[test]
    fn truncate_keeps_prefix() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::scalar(1.0));
        let mark = tape.len();
        let _ = tape.scale(x, 2.0);
        tape.truncate(mark);
        assert_eq!(tape.len(), 1);
    }
}
