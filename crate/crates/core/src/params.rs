//! Named, component-tagged parameter arrays with paired gradients.
//!
//! Iteration order is insertion order and is part of the determinism
//! contract: the optimizer, checkpoints, and snapshots all walk parameters
//! in the same order.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Which network a parameter belongs to; drives freezing and penalty scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Encoder,
    Decoder,
    Joint,
    Embedding,
}

impl Component {
    pub fn as_str(&self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Decoder => "decoder",
            Component::Joint => "joint",
            Component::Embedding => "embedding",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Component::Encoder),
            "decoder" => Ok(Component::Decoder),
            "joint" => Ok(Component::Joint),
            "embedding" => Ok(Component::Embedding),
            other => Err(Error::config(format!("unknown component {other:?}"))),
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Component::Encoder => 0,
            Component::Decoder => 1,
            Component::Joint => 2,
            Component::Embedding => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Component::Encoder),
            1 => Ok(Component::Decoder),
            2 => Ok(Component::Joint),
            3 => Ok(Component::Embedding),
            other => Err(Error::config(format!("bad component code {other}"))),
        }
    }
}

/// A parameter array; matrices and vectors are the only shapes the model
/// needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Matrix(Array2<f64>),
    Vector(Array1<f64>),
}

impl Value {
    pub fn len(&self) -> usize {
        match self {
            Value::Matrix(m) => m.len(),
            Value::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Value::Matrix(m) => m.shape().to_vec(),
            Value::Vector(v) => vec![v.len()],
        }
    }

    pub fn zeros_like(&self) -> Value {
        match self {
            Value::Matrix(m) => Value::Matrix(Array2::zeros(m.raw_dim())),
            Value::Vector(v) => Value::Vector(Array1::zeros(v.raw_dim())),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Value::Matrix(m) => m.as_slice().expect("standard layout"),
            Value::Vector(v) => v.as_slice().expect("standard layout"),
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            Value::Matrix(m) => m.as_slice_mut().expect("standard layout"),
            Value::Vector(v) => v.as_slice_mut().expect("standard layout"),
        }
    }

    pub fn fill(&mut self, x: f64) {
        for v in self.as_mut_slice() {
            *v = x;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub component: Component,
    pub value: Value,
    pub grad: Value,
}

#[derive(Debug, Clone)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    frozen: BTreeSet<Component>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore { params: Vec::new(), index: HashMap::new(), frozen: BTreeSet::new() }
    }

    pub fn insert(&mut self, name: &str, component: Component, value: Value) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let grad = value.zeros_like();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), component, value, grad });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> &Param {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("no parameter {name:?}"));
        &self.params[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("no parameter {name:?}"));
        &mut self.params[i]
    }

    pub fn mat(&self, name: &str) -> &Array2<f64> {
        match &self.get(name).value {
            Value::Matrix(m) => m,
            Value::Vector(_) => panic!("parameter {name:?} is a vector, expected matrix"),
        }
    }

    pub fn vec(&self, name: &str) -> &Array1<f64> {
        match &self.get(name).value {
            Value::Vector(v) => v,
            Value::Matrix(_) => panic!("parameter {name:?} is a matrix, expected vector"),
        }
    }

    /// Accumulates into a matrix parameter's gradient.
    pub fn add_grad_mat(&mut self, name: &str, delta: &Array2<f64>) {
        match &mut self.get_mut(name).grad {
            Value::Matrix(g) => *g += delta,
            Value::Vector(_) => panic!("parameter {name:?} is a vector, expected matrix"),
        }
    }

    pub fn add_grad_vec(&mut self, name: &str, delta: &Array1<f64>) {
        match &mut self.get_mut(name).grad {
            Value::Vector(g) => *g += delta,
            Value::Matrix(_) => panic!("parameter {name:?} is a matrix, expected vector"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Marks encoder parameters as excluded from optimizer updates.
    pub fn set_freeze_encoder(&mut self, freeze: bool) {
        if freeze {
            self.frozen.insert(Component::Encoder);
        } else {
            self.frozen.remove(&Component::Encoder);
        }
    }

    pub fn is_frozen(&self, component: Component) -> bool {
        self.frozen.contains(&component)
    }

    pub fn frozen_components(&self) -> &BTreeSet<Component> {
        &self.frozen
    }

    /// L2 norm of gradients over parameters that would receive updates.
    pub fn active_grad_norm(&self) -> f64 {
        let mut acc = 0.0;
        for p in &self.params {
            if self.frozen.contains(&p.component) {
                continue;
            }
            for g in p.grad.as_slice() {
                acc += g * g;
            }
        }
        acc.sqrt()
    }

    /// Scales gradients of non-frozen parameters in place.
    pub fn scale_active_grads(&mut self, scale: f64) {
        let frozen = self.frozen.clone();
        for p in &mut self.params {
            if frozen.contains(&p.component) {
                continue;
            }
            for g in p.grad.as_mut_slice() {
                *g *= scale;
            }
        }
    }

    /// Copies current values of the given components into a snapshot.
    pub fn snapshot(&self, scope: &BTreeSet<Component>) -> ParameterSnapshot {
        let entries = self
            .params
            .iter()
            .filter(|p| scope.contains(&p.component))
            .map(|p| (p.name.clone(), p.value.as_slice().to_vec()))
            .collect();
        ParameterSnapshot { entries }
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Immutable copy of parameter values taken at a stage boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSnapshot {
    entries: Vec<(String, Vec<f64>)>,
}

impl ParameterSnapshot {
    pub fn from_entries(entries: Vec<(String, Vec<f64>)>) -> Self {
        ParameterSnapshot { entries }
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
