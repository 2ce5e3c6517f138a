use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor plus its AdaGrad squared-gradient accumulator, which
/// stays empty until the first optimizer step.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub accumulator: Vec<f64>,
}

/// Initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// `U(−1/√fan_in, 1/√fan_in)`
    FanIn(usize),
    Uniform(f64),
}

/// Owns every trainable parameter of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let accumulator = Vec::new();
        self.params.push(Parameter {
            name,
            tensor: tensor.with_requires_grad(true),
            accumulator,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn init(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(v) => vec![v; n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        };
        self.add(name, Tensor::new(shape, data).expect("init: bad shape"))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Adds the gradients of every bound parameter into its grad slot.
    /// Parameters that did not take part get a zero gradient.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for p in &mut self.params {
            let n = p.tensor.len();
            p.tensor.grad_mut().get_or_insert_with(|| vec![0.0; n]);
        }
        for (pid, node) in tape.bindings() {
            if let Some(g) = grads.by_id(node) {
                let slot = self.params[pid.0].tensor.grad_mut().as_mut().unwrap();
                slot.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// Replaces values by name; every stored parameter must be present with a
    /// matching shape.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Input(format!(
                "checkpoint has {} parameters, model has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (name, t) in values {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Lookup(format!("checkpoint parameter `{name}` not in model")))?;
            let p = &mut self.params[id.0];
            if p.tensor.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "load_values",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            p.tensor = t.with_requires_grad(true);
        }
        Ok(())
    }
}
