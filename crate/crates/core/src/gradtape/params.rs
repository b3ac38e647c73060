use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named, ordered collection of trainable tensors with gradient accumulators.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::precondition(
                "param_set",
                format!("duplicate parameter name {name}"),
            ));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sum_sq()).sum::<f64>().sqrt()
    }

    /// SHA-256 over names, shapes and value bytes, in insertion order.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Converts every value to another precision; gradients are reset.
    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.value.cast()).expect("names already unique");
        }
        out
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        for p in &mut self.params {
            let src = other.by_name(&p.name).ok_or_else(|| {
                Error::precondition("copy_values_from", format!("missing {}", p.name))
            })?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape(
                    "copy_values_from",
                    format!("{}: {:?} vs {:?}", p.name, src.value.shape(), p.value.shape()),
                ));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}
