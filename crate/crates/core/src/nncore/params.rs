use rand::Rng;

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in insertion order, with the Adam moments of each.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    pub(crate) first_moment: Vec<Tensor<S>>,
    pub(crate) second_moment: Vec<Tensor<S>>,
    pub(crate) steps: u64,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let (r, c) = (value.rows(), value.cols());
        self.names.push(name);
        self.tensors.push(value);
        self.first_moment.push(Tensor::zeros(r, c));
        self.second_moment.push(Tensor::zeros(r, c));
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    /// Number of optimizer steps taken.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<S> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_scalars()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Same names and values in another precision; moments are reset.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.add(name.clone(), t.cast()).expect("names are unique");
        }
        out
    }
}

/// `rows x cols` weights drawn from `U(-1/sqrt(rows), 1/sqrt(rows))`.
pub fn uniform_init<S: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<S> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::lit(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("length matches")
}

/// Gradients laid out like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<S> {
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamGrads<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Self {
            tensors: store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: S) {
        for t in &mut self.tensors {
            t.scale(factor);
        }
    }

    pub fn global_norm(&self) -> S {
        self.tensors
            .iter()
            .fold(S::zero(), |acc, t| acc + t.sum_squares())
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn flatten(&self) -> Vec<S> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}
