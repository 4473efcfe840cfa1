//! Named parameter storage and tape bindings for convolution layers.

use std::collections::HashMap;

use crate::autodiff::{Tape, Var};
use crate::container::Container;
use crate::error::{ensure_dim, Error, Result};
use crate::ops::{ConvGeometry, ConvParams};
use crate::tensor::{Scalar, Tensor};

/// Ordered, named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        self.entries.len() - 1
    }

    /// Registers `{prefix}.weight` and `{prefix}.bias`.
    pub fn add_conv(&mut self, prefix: &str, conv: ConvParams<T>) -> ConvSlot {
        ConvSlot {
            weight: self.add(format!("{prefix}.weight"), conv.weight),
            bias: self.add(format!("{prefix}.bias"), conv.bias),
            geometry: conv.geometry,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on the tape, in store order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (_, t))| tape.param(t.clone(), i))
            .collect()
    }

    /// Records every parameter as a non-differentiable constant.
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.constant(t.clone())).collect()
    }

    pub fn conv(&self, slot: ConvSlot) -> ConvParams<T> {
        ConvParams {
            weight: self.tensor(slot.weight).clone(),
            bias: self.tensor(slot.bias).clone(),
            geometry: slot.geometry,
        }
    }

    pub fn to_container(&self) -> Container
    where
        Tensor<T>: crate::container::IntoAny,
    {
        let mut c = Container::new();
        for (name, t) in &self.entries {
            c.push(name.clone(), t.clone());
        }
        c
    }

    /// Overwrites every parameter from a container with exactly the same
    /// names and shapes.
    pub fn load_container(&mut self, container: &Container) -> Result<()> {
        ensure_dim("checkpoint", "parameter count", self.entries.len(), container.len())?;
        for (name, t) in self.entries.iter_mut() {
            let src = container
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{name}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.to_tensor();
        }
        Ok(())
    }
}

/// Store indices of one convolution's weight and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSlot {
    pub weight: usize,
    pub bias: usize,
    pub geometry: ConvGeometry,
}

impl ConvSlot {
    pub fn vars(&self, bound: &[Var]) -> ConvVars {
        ConvVars {
            weight: bound[self.weight],
            bias: bound[self.bias],
            geometry: self.geometry,
        }
    }
}

/// A convolution whose weight and bias live on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
    pub geometry: ConvGeometry,
}

impl ConvVars {
    pub fn constant<T: Scalar>(tape: &mut Tape<T>, conv: &ConvParams<T>) -> Self {
        ConvVars {
            weight: tape.constant(conv.weight.clone()),
            bias: tape.constant(conv.bias.clone()),
            geometry: conv.geometry,
        }
    }

    pub fn input<T: Scalar>(tape: &mut Tape<T>, conv: &ConvParams<T>) -> Self {
        ConvVars {
            weight: tape.input(conv.weight.clone()),
            bias: tape.input(conv.bias.clone()),
            geometry: conv.geometry,
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d(x, self.weight, self.bias, self.geometry)
    }

    pub fn out_channels<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.weight).n
    }
}
