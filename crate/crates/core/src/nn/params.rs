use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Owns every learnable tensor of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(NamedTensor { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    /// Replaces all values; names and shapes must match the current layout.
    pub fn load(&mut self, entries: Vec<NamedTensor>) -> Result<()> {
        if entries.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                self.entries.len(),
                entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter().zip(&entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        self.entries = entries;
        Ok(())
    }

    /// Puts every parameter on `graph` as a gradient-collecting leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound(self.entries.iter().map(|e| graph.variable(e.value.clone())).collect())
    }

    /// Puts every parameter on `graph` as a constant (inference only).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        Bound(self.entries.iter().map(|e| graph.constant(e.value.clone())).collect())
    }

    /// Gradients collected on `graph` for each parameter, zeros where the
    /// backward pass never reached it.
    pub fn gradients(&self, graph: &Graph, bound: &Bound) -> Vec<Tensor> {
        self.entries
            .iter()
            .zip(&bound.0)
            .map(|(e, v)| {
                graph
                    .grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(e.value.shape()))
            })
            .collect()
    }
}

/// Graph variables standing in for a [`ParamStore`] during one forward pass.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Seeded parameter initialisation.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }
}
