use std::collections::BTreeMap;

use rand::Rng;

use super::{NnError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `[-a, a]`.
    Uniform(f64),
}

impl Init {
    /// Recurrent, convolutional and dense weights.
    pub const WEIGHTS: Init = Init::Uniform(0.08);
    /// Embedding tables.
    pub const EMBEDDING: Init = Init::Uniform(0.25);

    fn build(self, shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        match self {
            Init::Zeros => {}
            Init::Constant(v) => t.fill(v),
            Init::Uniform(a) => t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-a..=a)),
        }
        t
    }
}

/// All trainable tensors of a model, addressed by id or unique name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, NnError> {
        if self.by_name.contains_key(name) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.to_string(), value, grad });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_init(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId, NnError> {
        self.add(name, init.build(shape, rng))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Adds backpropagated gradients into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (param, grad) in self.params.iter_mut().zip(&grads.grads) {
            if let Some(g) = grad {
                param.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients produced by one backward pass, aligned with the store's parameters.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub(crate) grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}
