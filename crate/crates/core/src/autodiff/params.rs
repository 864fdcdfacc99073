use std::collections::HashMap;

use rand::Rng;

use super::{AutodiffError, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
struct Param<T> {
    name: String,
    value: Tensor<T>,
    trainable: bool,
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_owned()));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name: name.to_owned(), value, trainable: true });
        self.by_name.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Add a tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name.get(name).copied().ok_or_else(|| AutodiffError::UnknownParam(name.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamGrad<T> {
    pub(crate) data: Vec<T>,
    pub(crate) touched: Vec<bool>,
}

/// Gradients of trainable parameters, with the set of rows that received
/// any contribution (for sparse updates).
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub(crate) slots: Vec<Option<ParamGrad<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub(crate) fn new(n_params: usize) -> Self {
        Grads { slots: vec![None; n_params] }
    }

    pub(crate) fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut ParamGrad<T> {
        self.slots[id.0].get_or_insert_with(|| ParamGrad { data: vec![T::zero(); shape.0 * shape.1], touched: vec![false; shape.0] })
    }

    /// Dense gradient of a parameter, if it received any.
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots.get(id.0).and_then(|s| s.as_ref()).map(|g| g.data.as_slice())
    }

    /// Rows with a recorded contribution.
    pub fn touched_rows(&self, id: ParamId) -> Vec<usize> {
        self.slots
            .get(id.0)
            .and_then(|s| s.as_ref())
            .map(|g| g.touched.iter().enumerate().filter(|(_, t)| **t).map(|(i, _)| i).collect())
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.data.iter().all(|x| x.is_finite()))
    }
}
