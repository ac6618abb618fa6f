//! Named parameter tensors with Adam moments.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::net::tape::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub adam_t: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: Vec::new(),
            index: HashMap::new(),
            adam_m: Vec::new(),
            adam_v: Vec::new(),
            adam_t: 0,
        }
    }

    pub fn add(&mut self, name: &str, t: Tensor, trainable: bool) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.adam_m.push(vec![0.0; t.len()]);
        self.adam_v.push(vec![0.0; t.len()]);
        self.tensors.push(t);
        self.trainable.push(trainable);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.trainable[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.tensors[i]
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values concatenated in registration order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Records every tensor on the tape. Frozen tensors, and all tensors
    /// when `trainable` is false, become constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .zip(&self.trainable)
            .map(|(t, &tr)| if trainable && tr { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound { vars, index: self.index.clone() }
    }

    /// Replaces values from another store with the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint("shape mismatch: parameter names differ".into()));
        }
        for (i, t) in other.tensors.iter().enumerate() {
            if t.shape != self.tensors[i].shape {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch: {} is {:?}, expected {:?}",
                    self.names[i], t.shape, self.tensors[i].shape
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        self.adam_m.clone_from(&other.adam_m);
        self.adam_v.clone_from(&other.adam_v);
        self.adam_t = other.adam_t;
        Ok(())
    }
}

/// Tape variables for a bound [`ParamStore`].
pub struct Bound {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }
}
