//! Compressed interaction network.
//!
//! Layer `k` produces `H_k` feature maps of width `D`:
//!
//! ```text
//! X^k[h, :] = Σ_i Σ_j W^{k,h}[i, j] · (X^{k-1}[i, :] ∘ X^0[j, :])
//! ```
//!
//! Feature maps are kept channels-last (`[B, D, H]`) so that the whole layer is
//! one pairwise Hadamard expansion followed by one matmul against a weight of
//! shape `[H_{k-1}·m, H_k]`, where row `i·m + j` holds `W^{k,·}[i, j]`.

use serde::{Deserialize, Serialize};

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cin {
    pub fields: usize,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<ParamId>,
    pub pooling: Pooling,
}

impl Cin {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        fields: usize,
        layer_sizes: &[usize],
        pooling: Pooling,
    ) -> Result<Self> {
        if layer_sizes.is_empty() || layer_sizes.contains(&0) {
            return Err(Error::Config(format!("invalid CIN layer sizes {layer_sizes:?}")));
        }
        let mut prev = fields;
        let weights = layer_sizes
            .iter()
            .enumerate()
            .map(|(k, &h)| {
                let fan_in = prev * fields;
                let id = store.add(format!("{name}.layer{k}"), init.uniform(&[fan_in, h], fan_in));
                prev = h;
                id
            })
            .collect();
        Ok(Cin {
            fields,
            layer_sizes: layer_sizes.to_vec(),
            weights,
            pooling,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Feature maps of every layer, each `[B, D, H_k]`.
    pub fn feature_maps(&self, g: &mut Graph, p: &Bound, x0: Var) -> Result<Vec<Var>> {
        let shape = g.shape(x0).to_vec();
        if shape.len() != 3 || shape[2] != self.fields {
            return Err(Error::dim(
                "cin",
                format!("expected [B, D, {}] input, got {shape:?}", self.fields),
            ));
        }
        let mut maps = Vec::with_capacity(self.weights.len());
        let mut x = x0;
        for w in &self.weights {
            let z = g.pairwise_hadamard(x, x0)?;
            x = g.matmul(z, p[*w])?;
            maps.push(x);
        }
        Ok(maps)
    }

    /// Pools each feature map over `D` and concatenates layers: `[B, ΣH_k]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x0: Var) -> Result<Var> {
        let maps = self.feature_maps(g, p, x0)?;
        let pooled = maps
            .into_iter()
            .map(|m| match self.pooling {
                Pooling::Sum => g.sum_axis(m, 1),
                Pooling::Mean => g.mean_axis(m, 1),
            })
            .collect::<Result<Vec<_>>>()?;
        g.concat(&pooled, 1)
    }
}
