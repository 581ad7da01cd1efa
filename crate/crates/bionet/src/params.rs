//! Registries for trainable parameters and non-trainable running buffers.
//!
//! Parameters are referenced by stable [`ParamId`]s so a weight can be used
//! by many tape operations (for example the same convolution applied at
//! every recurrence iteration) while gradients accumulate in one place.

use crate::error::{Error, Result};
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// Index of a parameter inside [`Params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Broad grouping used for parameter accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution weights and biases.
    Conv,
    /// Normalization scale and shift.
    Norm,
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Ordered collection of all trainable tensors of a model.
#[derive(Clone, Debug, Default)]
pub struct Params {
    items: Vec<Parameter>,
}

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> ParamId {
        self.items.push(Parameter { name: name.into(), kind, tensor });
        ParamId(self.items.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.items[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.items[id.0]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.items.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total element count across all parameters.
    pub fn numel(&self) -> usize {
        self.items.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Element count restricted to one parameter kind.
    pub fn numel_of_kind(&self, kind: ParamKind) -> usize {
        self.items
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Adds the tape gradients into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, p) in self.items.iter_mut().enumerate() {
            if let Some(g) = grads.param(ParamId(id)) {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.tensor.zero_grad();
        }
    }
}

/// Index of a running buffer inside [`Buffers`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// Named non-trainable state (batch norm running mean and variance).
#[derive(Clone, Debug, Default)]
pub struct Buffers {
    items: Vec<(String, Vec<f32>)>,
}

impl Buffers {
    pub fn new() -> Buffers {
        Buffers::default()
    }

    pub fn add(&mut self, name: impl Into<String>, values: Vec<f32>) -> BufferId {
        self.items.push((name.into(), values));
        BufferId(self.items.len() - 1)
    }

    pub fn get(&self, id: BufferId) -> &[f32] {
        &self.items[id.0].1
    }

    pub fn name(&self, id: BufferId) -> &str {
        &self.items[id.0].0
    }

    pub fn set(&mut self, id: BufferId, values: Vec<f32>) -> Result<()> {
        let slot = &mut self.items[id.0];
        if slot.1.len() != values.len() {
            return Err(Error::State(format!(
                "buffer {} holds {} values, cannot replace with {}",
                slot.0,
                slot.1.len(),
                values.len()
            )));
        }
        slot.1 = values;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BufferId, &str, &[f32])> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, (n, v))| (BufferId(i), n.as_str(), v.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (BufferId, &str, &mut Vec<f32>)> {
        self.items
            .iter_mut()
            .enumerate()
            .map(|(i, (n, v))| (BufferId(i), n.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn ids_are_stable_and_counts_split_by_kind() {
        let mut params = Params::new();
        let a = params.add("conv.w", ParamKind::Conv, Tensor::zeros(Shape::new(2, 1, 3, 3)));
        let b = params.add("norm.g", ParamKind::Norm, Tensor::zeros(Shape::new(1, 2, 1, 1)));
        assert_eq!(params.get(a).name, "conv.w");
        assert_eq!(params.get(b).kind, ParamKind::Norm);
        assert_eq!(params.numel(), 18 + 2);
        assert_eq!(params.numel_of_kind(ParamKind::Conv), 18);
        assert_eq!(params.numel_of_kind(ParamKind::Norm), 2);
    }

    #[test]
    fn buffer_replacement_checks_length() {
        let mut buffers = Buffers::new();
        let id = buffers.add("bn.mean", vec![0.0; 4]);
        assert!(buffers.set(id, vec![1.0; 4]).is_ok());
        assert!(buffers.set(id, vec![1.0; 3]).is_err());
        assert_eq!(buffers.get(id), &[1.0; 4]);
    }
}
