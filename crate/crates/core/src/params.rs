//! Named parameter tensors with matching gradient slots.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Every parameter owns exactly one gradient slot of the same shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidConfig { field: "param", reason: format!("duplicate parameter `{name}`") });
        }
        let grad = Tensor::new(value.shape().to_vec(), alloc::vec![0.0; value.len()])?;
        let id = self.params.len();
        self.params.push(Param { name: name.to_string(), value, grad });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// `in_dim x out_dim` weights from `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn add_uniform(&mut self, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<ParamId> {
        let bound = 1.0 / math::sqrt(in_dim as f64);
        let data = (0..in_dim * out_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.add(name, Tensor::matrix(in_dim, out_dim, data)?)
    }

    pub fn add_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_filled(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<ParamId> {
        self.add(name, Tensor::filled(rows, cols, value))
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

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).map(|&i| ParamId(i)).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    /// Replaces a value by name, keeping the registered shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return shape_err("param_set", format!("{name}: expected {:?}, got {:?}", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) {
        self.step += 1;
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// `(name, value)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Names of parameters whose values differ from `other`.
    pub fn diff_names(&self, other: &ParamStore) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| other.index.get(&p.name).is_none_or(|&j| other.params[j].value != p.value))
            .map(|p| p.name.clone())
            .collect()
    }
}
