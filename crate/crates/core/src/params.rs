//! Named, ordered parameter storage.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identifies a parameter by its position in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, t: Tensor<F>) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(t.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<F>> {
        self.find(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        match self.find(name) {
            Some(id) => Ok(self.get_mut(id)),
            None => Err(Error::InvalidArgument(format!("no parameter named {name}"))),
        }
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds every parameter to `g` as a gradient-requiring leaf.
    pub fn bind(&self, g: &mut Graph<F>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.leaf(t.clone())).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Graph handles for a bound [`ParamSet`], in parameter order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for all parameters after `g.backward`, zeros where unreached.
    pub fn grads<F: Scalar>(&self, g: &Graph<F>) -> Vec<Vec<F>> {
        self.vars.iter().map(|&v| g.grad(v)).collect()
    }
}
