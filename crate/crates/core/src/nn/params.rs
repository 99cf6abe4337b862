use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use super::INIT_RANGE;
use crate::autodiff::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("unexpected parameter `{0}`")]
    Unexpected(String),
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Weight initialised from `U(-INIT_RANGE, INIT_RANGE)`.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], rng: &mut R) {
        self.insert(name, Tensor::uniform(shape, -INIT_RANGE, INIT_RANGE, rng));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], v: f64) {
        self.insert(name, Tensor::full(shape, v));
    }

    /// Entries whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Check that `self` holds exactly the names and shapes of `template`.
    pub fn check_against(&self, template: &ParamStore) -> Result<(), ParamError> {
        for (name, t) in &template.params {
            let found = self.params.get(name).ok_or_else(|| ParamError::Missing(name.clone()))?;
            if found.shape() != t.shape() {
                return Err(ParamError::Shape {
                    name: name.clone(),
                    found: found.shape().to_vec(),
                    expected: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !template.params.contains_key(*k)) {
            return Err(ParamError::Unexpected(extra.clone()));
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }

    /// Bind every tensor into `g`; `trainable` picks which become gradient leaves.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| {
                let v = if trainable(k) { g.leaf(t.clone()) } else { g.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound into one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients of the trainable entries, keyed by parameter name.
    pub fn grads(&self, g: &Graph, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, v)| g.requires_grad(**v))
            .filter_map(|(k, v)| grads.get(*v).map(|t| (k.clone(), t.clone())))
            .collect()
    }

    pub fn merge(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }
}
