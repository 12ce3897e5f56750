//! Named parameter storage and per-forward-pass tape bindings.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            tensors: Vec::new(),
            names: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same names, values converted to another float type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            names: self.names.clone(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad(true));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (i, n.as_str(), t))
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).filter(|&i| self.tensors[i].requires_grad)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.tensors[id].requires_grad = trainable;
    }

    /// Overwrites values from `other`, matching by name and shape. Trainable
    /// flags of `self` are kept.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match model ({})",
                other.len(),
                self.len()
            )));
        }
        for (name, t) in other.names.iter().zip(&other.tensors) {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let dst = &mut self.tensors[id];
            if dst.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} vs model {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

/// Lazily binds parameters into one tape, each at most once.
pub struct Binder<'a, T: Real = f32> {
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
}

impl<'a, T: Real> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Binder {
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn var(&mut self, tape: &mut Tape<'a, T>, id: ParamId) -> Var {
        *self.vars[id].get_or_insert_with(|| tape.leaf(&self.store.tensors[id]))
    }

    pub fn into_bindings(self) -> Vec<Option<Var>> {
        self.vars
    }
}
