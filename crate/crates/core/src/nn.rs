//! Named parameter storage and the small layer helpers built on it.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered map of parameter name → tensor. Order is registration order and
/// is what checkpoints and optimizer moments follow.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.entries.contains_key(&name), "duplicate parameter {name}");
        let (idx, _) = self.entries.insert_full(name, value);
        ParamId(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0]
    }

    pub fn get_index(&self, index: usize) -> &Tensor {
        &self.entries[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.values()
    }

    /// Replaces the value at `index` (registration order); shapes must agree.
    pub fn set_index(&mut self, index: usize, value: Tensor) -> Result<()> {
        let (name, slot) = self
            .entries
            .get_index_mut(index)
            .ok_or_else(|| Error::Usage(format!("no parameter at index {index}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: shape {:?} cannot take {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        self.set_index(id.0, value)
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for v in self.entries.values_mut() {
            *v = Tensor::zeros(v.shape());
        }
    }

    /// Registers every parameter on `tape`, as a differentiable leaf when
    /// `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .entries
            .values()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters of a [`ParamStore`] as they appear on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Wraps vars created elsewhere, in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// Uniform `±1/√fan_in` initialization.
pub fn uniform_init(rng: &mut SplitRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.uniform(-bound, bound))
}

/// Affine map over the last axis, `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut SplitRng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(rng, &[fan_in, fan_out], fan_in),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_init(rng, &[fan_out], fan_in)));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.linear(p.get(self.weight), self.bias.map(|b| p.get(b)))
    }

    pub fn num_scalars(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias.is_some() { self.fan_out } else { 0 }
    }
}
