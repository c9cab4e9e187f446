use serde::{Deserialize, Serialize};

use super::layers::{Linear, Prelu};
use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Scaled dot-product attention, batched over the leading axis:
/// `softmax(q·kᵀ / sqrt(d_k)) · v`.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
        return Err(Error::dim("attention", "q, k, v must be [B, t, width]"));
    }
    if sq[2] != sk[2] {
        return Err(Error::dim("attention", format!("q {sq:?} and k {sk:?} widths differ")));
    }
    if sk[1] != sv[1] || sq[0] != sk[0] || sk[0] != sv[0] {
        return Err(Error::dim("attention", format!("k {sk:?} and v {sv:?} rows differ")));
    }
    let scores = g.bmm(q, k, true)?;
    let scaled = g.scale(scores, 1.0 / (sq[2] as f64).sqrt());
    let weights = g.softmax(scaled);
    g.bmm(weights, v, false)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Head {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// Multi-head self-attention: per-head projections, concatenation, output
/// projection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub model_dim: usize,
    pub head_dim: usize,
    pub heads: Vec<Head>,
    pub output: ParamId,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        model_dim: usize,
        num_heads: usize,
    ) -> Result<Self> {
        if num_heads == 0 || model_dim % num_heads != 0 {
            return Err(Error::Config(format!(
                "model dim {model_dim} is not divisible by {num_heads} heads"
            )));
        }
        let head_dim = model_dim / num_heads;
        let heads = (0..num_heads)
            .map(|h| Head {
                query: store.add(format!("{name}.head{h}.query"), init.uniform(&[model_dim, head_dim], model_dim)),
                key: store.add(format!("{name}.head{h}.key"), init.uniform(&[model_dim, head_dim], model_dim)),
                value: store.add(format!("{name}.head{h}.value"), init.uniform(&[model_dim, head_dim], model_dim)),
            })
            .collect();
        let output = store.add(
            format!("{name}.output"),
            init.uniform(&[num_heads * head_dim, model_dim], num_heads * head_dim),
        );
        Ok(MultiHeadAttention {
            model_dim,
            head_dim,
            heads,
            output,
        })
    }

    /// `x: [B, t, d_model] -> [B, t, d_model]`, with queries, keys and values
    /// all taken from `x`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.model_dim {
            return Err(Error::dim(
                "multi_head_self_attention",
                format!("expected [B, t, {}], got {shape:?}", self.model_dim),
            ));
        }
        let mut outputs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = g.matmul(x, p[head.query])?;
            let k = g.matmul(x, p[head.key])?;
            let v = g.matmul(x, p[head.value])?;
            outputs.push(attention(g, q, k, v)?);
        }
        let joined = g.concat(&outputs, 2)?;
        g.matmul(joined, p[self.output])
    }
}

/// Fixed sinusoidal position table `[len, width]`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Tensor {
    let mut table = Tensor::zeros(&[len, width]);
    for pos in 0..len {
        for i in 0..width {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let angle = pos as f64 / freq;
            table.data_mut()[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

/// One transformer block over a behaviour sequence, max-pooled over time.
///
/// Input rows are projected to `d_model`, optionally offset by sinusoidal
/// positions, passed through self-attention with a residual connection and a
/// position-wise affine + PReLU, then reduced by a max over the time axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequenceEncoder {
    pub channels: usize,
    pub positional: bool,
    pub input: Linear,
    pub attention: MultiHeadAttention,
    pub feed_forward: Linear,
    pub act: Prelu,
}

/// Intermediate values of [`SequenceEncoder::encode`].
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[B, t, d_model]`, the tensor that gets pooled.
    pub per_step: Var,
    /// `[B, d_model]`
    pub pooled: Var,
}

impl SequenceEncoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        channels: usize,
        model_dim: usize,
        num_heads: usize,
        positional: bool,
    ) -> Result<Self> {
        Ok(SequenceEncoder {
            channels,
            positional,
            input: Linear::new(store, init, &format!("{name}.input"), channels, model_dim),
            attention: MultiHeadAttention::new(store, init, &format!("{name}.attention"), model_dim, num_heads)?,
            feed_forward: Linear::new(store, init, &format!("{name}.ffn"), model_dim, model_dim),
            act: Prelu::new(store, &format!("{name}.act")),
        })
    }

    pub fn model_dim(&self) -> usize {
        self.attention.model_dim
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, seq: Var) -> Result<Encoded> {
        let shape = g.shape(seq).to_vec();
        if shape.len() != 3 || shape[2] != self.channels {
            return Err(Error::Input(format!(
                "sequence must be [B, t, {}], got {shape:?}",
                self.channels
            )));
        }
        let steps = shape[1];
        let mut h = self.input.forward(g, p, seq)?;
        if self.positional {
            let table = g.constant(sinusoidal_positions(steps, self.model_dim()));
            h = g.add_broadcast(h, table)?;
        }
        let attended = self.attention.forward(g, p, h)?;
        let h = g.add(h, attended)?;
        let h = self.feed_forward.forward(g, p, h)?;
        let per_step = self.act.forward(g, p, h)?;
        let pooled = g.max_axis(per_step, 1)?;
        Ok(Encoded { per_step, pooled })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, seq: Var) -> Result<Var> {
        Ok(self.encode(g, p, seq)?.pooled)
    }
}
