use std::collections::HashMap;

use rand::Rng;

use super::conv::{Conv2dSpec, Conv3dSpec};
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(id)
    }

    /// Uniform `[-√(1/fan_in), √(1/fan_in)]` initialization.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a borrowed leaf. With `track` unset the
    /// leaves are constants and backward skips them.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, track: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if track {
                    tape.leaf(t, true)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    /// Adds `scale · ∂loss/∂θ` into each parameter's stored gradient.
    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &[Var], scale: f64) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            match grads.get(v) {
                Some(g) => t.accumulate_grad(g, scale),
                None => {
                    let n = t.len();
                    t.accumulate_grad(&vec![0.0; n], scale)
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Copies every tensor whose name and shape also exist in `other`.
    /// Returns the number of tensors copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if let Some(src) = other.by_name(name) {
                if src.shape() == t.shape() {
                    t.data_mut().copy_from_slice(src.data());
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Overwrites the tensor called `name`, checking its shape.
    pub fn assign(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let t = self
            .by_name_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if t.shape() != value.shape() {
            return Err(Error::shape("assign", t.shape(), value.shape()));
        }
        t.data_mut().copy_from_slice(value.data());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub spec: Conv2dSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2dLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = spec.fan_in();
        let weight = store.add_uniform(format!("{name}.weight"), &spec.weight_shape(), fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[spec.out_channels], fan_in, rng);
        Self { spec, weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, vars: &[Var]) -> Result<Var> {
        tape.conv2d(x, vars[self.weight.0], vars[self.bias.0], self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.spec.fan_in() * self.spec.out_channels + self.spec.out_channels
    }

    /// Multiply-accumulates for one forward pass producing `out_shape`.
    pub fn macs(&self, out_shape: &[usize; 3]) -> usize {
        out_shape.iter().product::<usize>() * self.spec.fan_in()
    }
}

#[derive(Debug, Clone)]
pub struct Conv3dLayer {
    pub spec: Conv3dSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv3dLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: Conv3dSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = spec.fan_in();
        let weight = store.add_uniform(format!("{name}.weight"), &spec.weight_shape(), fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[spec.out_channels], fan_in, rng);
        Self { spec, weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, vars: &[Var]) -> Result<Var> {
        tape.conv3d(x, vars[self.weight.0], vars[self.bias.0], self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.spec.fan_in() * self.spec.out_channels + self.spec.out_channels
    }

    pub fn macs(&self, out_shape: &[usize; 4]) -> usize {
        out_shape.iter().product::<usize>() * self.spec.fan_in()
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[out_features, in_features],
            in_features,
            rng,
        );
        let bias = store.add_uniform(format!("{name}.bias"), &[out_features], in_features, rng);
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, vars: &[Var]) -> Result<Var> {
        tape.linear(x, vars[self.weight.0], vars[self.bias.0])
    }

    pub fn param_count(&self) -> usize {
        (self.in_features + 1) * self.out_features
    }

    /// MACs for `rows` independent input rows.
    pub fn macs(&self, rows: usize) -> usize {
        rows * self.in_features * self.out_features
    }
}
