use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<F> {
    pub name: String,
    pub tensor: Tensor<F>,
    /// Excluded from the L2 penalty (biases).
    pub l2_exempt: bool,
}

/// Named trainable tensors in insertion order. The position of a tensor is
/// its slot, which is how gradients and optimizer moments are matched up.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<F> {
    entries: Vec<ParamEntry<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>, l2_exempt: bool) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.entries.push(ParamEntry {
            name: name.clone(),
            tensor,
            l2_exempt,
        });
        self.index.insert(name, self.entries.len() - 1);
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.slot(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        let i = self.slot(name)?;
        Some(&mut self.entries[i].tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<F>> {
        self.get(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn entry(&self, slot: usize) -> &ParamEntry<F> {
        &self.entries[slot]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor<F> {
        &mut self.entries[slot].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<F>> {
        self.entries.iter()
    }

    /// Squared L2 norm of every non-exempt parameter.
    pub fn l2_sum(&self) -> F {
        self.entries
            .iter()
            .filter(|e| !e.l2_exempt)
            .map(|e| e.tensor.sum_squares())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let mut out = ModelParams::new();
        for e in &self.entries {
            out.insert(e.name.clone(), e.tensor.cast(), e.l2_exempt)
                .expect("names already unique");
        }
        out
    }
}
