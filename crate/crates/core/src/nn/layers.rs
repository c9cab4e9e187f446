use serde::{Deserialize, Serialize};

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const PRELU_INIT: f64 = 0.25;

/// Affine map `x·W + b` over the last axis. `W` is stored `[in, out]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, input: usize, output: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), init.uniform(&[input, output], input));
        let bias = store.add(format!("{name}.bias"), init.uniform(&[output], input));
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let width = *g.shape(x).last().unwrap();
        if width != self.input {
            return Err(Error::dim(
                "linear",
                format!("expected input width {}, got {:?}", self.input, g.shape(x)),
            ));
        }
        let xw = g.matmul(x, p[self.weight])?;
        g.add_broadcast(xw, p[self.bias])
    }
}

/// Learnable-slope rectifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Prelu {
    pub alpha: ParamId,
}

impl Prelu {
    pub fn new(store: &mut ParamStore, name: &str) -> Self {
        Prelu {
            alpha: store.add(format!("{name}.alpha"), Tensor::scalar(PRELU_INIT)),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.prelu(x, p[self.alpha])
    }
}

/// `x + f(x)` with `f` = affine, PReLU, affine.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub expand: Linear,
    pub act: Prelu,
    pub project: Linear,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, width: usize, inner: usize) -> Self {
        ResidualBlock {
            expand: Linear::new(store, init, &format!("{name}.expand"), width, inner),
            act: Prelu::new(store, &format!("{name}.act")),
            project: Linear::new(store, init, &format!("{name}.project"), inner, width),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.expand.forward(g, p, x)?;
        let h = self.act.forward(g, p, h)?;
        let f = self.project.forward(g, p, h)?;
        g.add(f, x)
    }
}
