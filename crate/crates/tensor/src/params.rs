//! Named parameters, running-statistic buffers and their per-pass binding
//! onto a tape.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Optimized by gradient descent.
    Weight,
    /// Carried state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Accumulated gradient; empty for buffers.
    pub grad: Vec<T>,
    pub role: Role,
}

/// Registry of every named tensor in a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, role: Role) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateName(name.to_string()));
        }
        let grad = match role {
            Role::Weight => vec![T::zero(); value.numel()],
            Role::Buffer => Vec::new(),
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            role,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn add_weight(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, Role::Weight)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, Role::Buffer)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| TensorError::UnknownName(name.to_string()))
    }

    /// Replaces a tensor's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| TensorError::UnknownName(name.to_string()))?;
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(TensorError::shape("ParamStore::set", format!("{name}: {:?} vs {:?}", slot.shape(), value.shape())));
        }
        *slot = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Number of scalar weights (buffers excluded).
    pub fn weight_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.role == Role::Weight)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.iter().map(|&g| U::of(g.as_f64())).collect(),
                    role: p.role,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, value) in updates {
            self.entries[id.0].value = value;
        }
    }

    /// Adds the gradients of every bound weight that required them.
    pub fn accumulate_grads(&mut self, frame: &Frame<'_, T>, grads: &Gradients<T>) {
        for (i, p) in self.entries.iter_mut().enumerate() {
            if p.role != Role::Weight {
                continue;
            }
            if let Some(g) = grads.get(&frame.vars[i]) {
                for (a, &b) in p.grad.iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }
}

/// Binding of every store entry to a tape leaf for one forward pass.
pub struct Frame<'t, T: Scalar> {
    tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
    train: bool,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, T: Scalar> Frame<'t, T> {
    /// Weights for which `trainable(name)` holds become gradient-tracked leaves;
    /// everything else is bound as a constant.
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, train: bool, trainable: impl Fn(&str) -> bool) -> Self {
        let vars = store
            .entries
            .iter()
            .map(|p| tape.leaf(p.value.clone(), p.role == Role::Weight && trainable(&p.name)))
            .collect();
        Frame {
            tape,
            vars,
            train,
            updates: RefCell::new(Vec::new()),
        }
    }

    /// Binds caller-created leaves, one per store entry in registration order.
    pub fn from_vars(tape: &'t Tape<T>, vars: Vec<Var<'t, T>>, train: bool) -> Self {
        Frame {
            tape,
            vars,
            train,
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn record_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn take_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.updates.borrow_mut())
    }
}
