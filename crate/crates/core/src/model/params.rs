//! Named trainable tensors with gradient slots.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Param {
    value: Tensor,
    grad: Vec<f64>,
}

/// Gradients of a loss with respect to named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub(crate) fn insert(&mut self, name: String, grad: Vec<f64>) {
        match self.0.get_mut(&name) {
            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
            None => {
                self.0.insert(name, grad);
            }
        }
    }

    /// Adds `scale · other` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.0 {
            match self.0.get_mut(name) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += scale * v),
                None => {
                    self.0.insert(name.clone(), g.iter().map(|v| scale * v).collect());
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Declares one parameter tensor for [`ParameterSet::initialize`].
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in ±gain·sqrt(6 / (fan_in + fan_out)).
    Xavier {
        fan_in: usize,
        fan_out: usize,
        gain: f64,
    },
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// Named trainable tensors. Iteration order is by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
    seed: u64,
}

impl ParameterSet {
    /// Initializes parameters in declaration order from a ChaCha stream seeded with `seed`.
    pub fn initialize(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Constant(c) => vec![c; n],
                Init::Xavier { fan_in, fan_out, gain } => {
                    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
            };
            let value = Tensor::new(spec.shape.clone(), data)?;
            if params
                .insert(
                    spec.name.clone(),
                    Param {
                        grad: vec![0.0; n],
                        value,
                    },
                )
                .is_some()
            {
                return Err(Error::invalid(format!("duplicate parameter name '{}'", spec.name)));
            }
        }
        Ok(Self { params, seed })
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor)>, seed: u64) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (name, value) in tensors {
            let grad = vec![0.0; value.len()];
            if params.insert(name.clone(), Param { value, grad }).is_some() {
                return Err(Error::invalid(format!("duplicate parameter name '{name}'")));
            }
        }
        Ok(Self { params, seed })
    }

    /// Fails unless the set holds exactly the declared names and shapes.
    pub fn conforms_to(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for spec in specs {
            let found = self.get(&spec.name)?.shape();
            if found != spec.shape.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter '{}' has shape {found:?}, expected {:?}",
                    spec.name, spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        self.params
            .get(name)
            .map(|p| p.grad.as_slice())
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale · grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter '{name}'")))?;
            if p.grad.len() != g.len() {
                return Err(Error::invalid(format!("gradient size mismatch for '{name}'")));
            }
            p.grad.iter_mut().zip(g).for_each(|(a, v)| *a += scale * v);
        }
        Ok(())
    }

    /// Plain gradient descent on the accumulated gradients, then clears them.
    /// Parameters whose gradient slot is all zero are left bitwise untouched.
    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            if p.grad.iter().all(|g| *g == 0.0) {
                continue;
            }
            for (v, g) in p.value.data_mut().iter_mut().zip(&p.grad) {
                *v -= learning_rate * g;
            }
            if p.value.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter '{name}' after update")));
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }

    /// Bitwise comparison of every parameter whose name starts with `prefix`.
    pub fn same_values_with_prefix(&self, other: &ParameterSet, prefix: &str) -> bool {
        let a: Vec<_> = self.params.iter().filter(|(k, _)| k.starts_with(prefix)).collect();
        let b: Vec<_> = other.params.iter().filter(|(k, _)| k.starts_with(prefix)).collect();
        a.len() == b.len()
            && a.into_iter().zip(b).all(|((ka, pa), (kb, pb))| {
                ka == kb
                    && pa.value.shape() == pb.value.shape()
                    && pa
                        .value
                        .data()
                        .iter()
                        .zip(pb.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Whether `other` has the same names, shapes and bitwise-identical values.
    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        self.params.len() == other.params.len() && self.same_values_with_prefix(other, "")
    }
}
