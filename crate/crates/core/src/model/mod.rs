//! The full multi-task network.
//!
//! ```text
//!   fields ──► embedding E ──► CIN ─────────┐
//!   short seq ──► transformer ──► max-pool ─┼─► concat ─► residual trunk ─┐
//!   long seq  ──► transformer ──► max-pool ─┘                            (+)─► fused
//!   E (flattened) ──► linear ─────────────────────────────────────────────┘
//!
//!   fused ─► browse / collect / cart / purchase heads ─► H_c
//!   p_c = σ(w_c·H_c + b_c)                                    (marginals)
//!   q_c = σ(w'_c·gru_fuse(H_c, H_purchase) + b'_c)            (conditionals)
//!   p_purchase = Σ_c p_c · q_c                                (total probability)
//!   ov = w_ov·fused + b_ov                                    (order volume)
//! ```

mod fusion;

use serde::{Deserialize, Serialize};

pub use fusion::{conditional_prob, total_probability, total_probability_value, GruFusion};

use crate::data::{Batch, Behavior, GeneratorConfig};
use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown, LossScheme, TaskLosses, PROB_MAX, PROB_MIN};
use crate::nn::{
    Bound, Cin, Embedding, FieldSchema, Init, Linear, ParamId, ParamStore, Pooling, Prelu, ResidualBlock,
    SequenceEncoder,
};
use crate::tensor::{Graph, Var};

/// How the purchase probability is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PurchaseHead {
    /// GRU-fused conditionals composed with the marginals.
    #[default]
    TotalProbability,
    /// A plain sigmoid head on the purchase hidden state (no fusion).
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub cin_layers: Vec<usize>,
    pub cin_pooling: Pooling,
    pub model_dim: usize,
    pub heads: usize,
    pub positional_encoding: bool,
    pub trunk_width: usize,
    pub residual_blocks: usize,
    pub hidden_dim: usize,
    pub purchase_head: PurchaseHead,
    pub linear_path: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 8,
            cin_layers: vec![8, 8],
            cin_pooling: Pooling::Sum,
            model_dim: 16,
            heads: 2,
            positional_encoding: true,
            trunk_width: 64,
            residual_blocks: 1,
            hidden_dim: 16,
            purchase_head: PurchaseHead::TotalProbability,
            linear_path: true,
        }
    }
}

/// Shapes the model needs from the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub cardinalities: Vec<usize>,
    /// `t`
    pub short_len: usize,
    /// `T`
    pub long_len: usize,
    /// `d`
    pub channels: usize,
}

impl InputSpec {
    pub fn from_generator(config: &GeneratorConfig) -> Self {
        InputSpec {
            cardinalities: config.cardinalities.clone(),
            short_len: config.short_len,
            long_len: config.long_len,
            channels: config.channels,
        }
    }
}

/// One hidden-state head per behaviour.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskHead {
    pub hidden: Linear,
    pub act: Prelu,
}

impl TaskHead {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, input: usize, hidden: usize) -> Self {
        TaskHead {
            hidden: Linear::new(store, init, &format!("{name}.hidden"), input, hidden),
            act: Prelu::new(store, &format!("{name}.act")),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, p, x)?;
        self.act.forward(g, p, h)
    }
}

/// Per-condition fusion block plus its scalar projection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalHead {
    pub fusion: GruFusion,
    pub projection: Linear,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layout {
    pub embedding: Embedding,
    pub cin: Cin,
    pub short_encoder: SequenceEncoder,
    pub long_encoder: SequenceEncoder,
    pub trunk_input: Linear,
    pub trunk_act: Prelu,
    pub blocks: Vec<ResidualBlock>,
    pub linear: Option<Linear>,
    /// Browse, collect, cart, purchase.
    pub heads: Vec<TaskHead>,
    /// Scalar projections for the browse, collect and cart marginals.
    pub marginals: Vec<Linear>,
    /// Browse, collect and cart conditionals (total-probability head only).
    pub conditionals: Vec<ConditionalHead>,
    /// Direct purchase projection (direct head only).
    pub purchase: Option<Linear>,
    pub order_volume: Linear,
    pub log_variances: ParamId,
}

/// Graph nodes produced by one forward pass, each `[B, 1]`.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    /// Browse, collect, cart marginals, clamped.
    pub marginals: [Var; 3],
    /// Browse, collect, cart conditionals, clamped (total-probability head).
    pub conditionals: Option<[Var; 3]>,
    /// Composed (or direct) purchase probability before clamping.
    pub purchase_raw: Var,
    /// What enters the purchase log-loss.
    pub purchase: Var,
    pub order_volume: Var,
}

/// Plain-number outputs for one example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOutputs {
    pub p_browse: f64,
    pub p_collect: f64,
    pub p_cart: f64,
    /// `(q_browse, q_collect, q_cart)` for the total-probability head.
    pub conditionals: Option<[f64; 3]>,
    /// Unclamped; may exceed 1.
    pub p_purchase_raw: f64,
    pub p_purchase: f64,
    pub ov_pred: f64,
}

impl TaskOutputs {
    pub fn probability(&self, b: Behavior) -> f64 {
        match b {
            Behavior::Browse => self.p_browse,
            Behavior::Collect => self.p_collect,
            Behavior::Cart => self.p_cart,
            Behavior::Purchase => self.p_purchase,
        }
    }
}

/// Loss of one batch.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Anything the shared trainer can optimise and the evaluator can score.
pub trait MultiTaskModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn loss(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<LossOutput>;
    fn predict(&self, batch: &Batch) -> Result<Vec<TaskOutputs>>;
}

/// The total-probability multi-task network (and, with a direct purchase
/// head and equal weights, its plain multi-task ablation).
#[derive(Clone, Debug)]
pub struct TpgDnn {
    pub config: ModelConfig,
    pub input: InputSpec,
    pub scheme: LossScheme,
    pub layout: Layout,
    pub params: ParamStore,
}

fn read_column(g: &Graph, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

impl TpgDnn {
    pub fn new(config: ModelConfig, input: InputSpec, scheme: LossScheme, seed: u64) -> Result<Self> {
        if input.channels == 0 {
            return Err(Error::Config("sequences need at least one channel".into()));
        }
        if config.hidden_dim == 0 || config.trunk_width == 0 {
            return Err(Error::Config("hidden and trunk widths must be positive".into()));
        }
        let schema = FieldSchema::new(&input.cardinalities, config.embedding_dim)?;
        let m = schema.num_fields();
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let st = &mut store;
        let it = &mut init;

        let embedding = Embedding::new(st, it, "embedding", schema);
        let cin = Cin::new(st, it, "cin", m, &config.cin_layers, config.cin_pooling)?;
        let short_encoder = SequenceEncoder::new(
            st, it, "short", input.channels, config.model_dim, config.heads, config.positional_encoding,
        )?;
        let long_encoder = SequenceEncoder::new(
            st, it, "long", input.channels, config.model_dim, config.heads, config.positional_encoding,
        )?;
        let deep_in = cin.output_dim() + 2 * config.model_dim;
        let w = config.trunk_width;
        let trunk_input = Linear::new(st, it, "trunk.input", deep_in, w);
        let trunk_act = Prelu::new(st, "trunk.act");
        let blocks = (0..config.residual_blocks)
            .map(|i| ResidualBlock::new(st, it, &format!("trunk.block{i}"), w, w))
            .collect();
        let linear = config
            .linear_path
            .then(|| Linear::new(st, it, "linear", m * config.embedding_dim, w));

        let dh = config.hidden_dim;
        let heads = Behavior::ALL
            .iter()
            .map(|b| TaskHead::new(st, it, &format!("head.{}", b.name()), w, dh))
            .collect();
        let marginals = Behavior::CONDITIONS
            .iter()
            .map(|b| Linear::new(st, it, &format!("marginal.{}", b.name()), dh, 1))
            .collect();
        let (conditionals, purchase) = match config.purchase_head {
            PurchaseHead::TotalProbability => (
                Behavior::CONDITIONS
                    .iter()
                    .map(|b| ConditionalHead {
                        fusion: GruFusion::new(st, it, &format!("fusion.{}", b.name()), dh),
                        projection: Linear::new(st, it, &format!("conditional.{}", b.name()), dh, 1),
                    })
                    .collect(),
                None,
            ),
            PurchaseHead::Direct => (Vec::new(), Some(Linear::new(st, it, "marginal.purchase", dh, 1))),
        };
        let order_volume = Linear::new(st, it, "order_volume", w, 1);
        let log_variances = st.add("loss.log_variance", loss::initial_log_variances());

        Ok(TpgDnn {
            config,
            input,
            scheme,
            layout: Layout {
                embedding,
                cin,
                short_encoder,
                long_encoder,
                trunk_input,
                trunk_act,
                blocks,
                linear,
                heads,
                marginals,
                conditionals,
                purchase,
                order_volume,
                log_variances,
            },
            params: store,
        })
    }

    /// Deep trunk output and (if enabled) the linear path, both `[B, W]`.
    pub fn feature_parts(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<(Var, Option<Var>)> {
        let l = &self.layout;
        let e = l.embedding.forward(g, p, &batch.fields)?;
        let crossed = l.cin.forward(g, p, e)?;
        let short = g.constant(batch.short.clone());
        let short = l.short_encoder.forward(g, p, short)?;
        let long = g.constant(batch.long.clone());
        let long = l.long_encoder.forward(g, p, long)?;
        let deep = g.concat(&[crossed, short, long], 1)?;
        let deep = l.trunk_input.forward(g, p, deep)?;
        let mut deep = l.trunk_act.forward(g, p, deep)?;
        for block in &l.blocks {
            deep = block.forward(g, p, deep)?;
        }
        let linear = match &l.linear {
            Some(lin) => {
                let flat = g.reshape(e, &[batch.size, self.config.embedding_dim * self.input.cardinalities.len()])?;
                Some(lin.forward(g, p, flat)?)
            }
            None => None,
        };
        Ok((deep, linear))
    }

    /// Fused representation feeding every head: deep trunk plus linear path.
    pub fn extract_features(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<Var> {
        match self.feature_parts(g, p, batch)? {
            (deep, Some(linear)) => g.add(deep, linear),
            (deep, None) => Ok(deep),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<ForwardOutputs> {
        let l = &self.layout;
        let fused = self.extract_features(g, p, batch)?;
        let hidden = l
            .heads
            .iter()
            .map(|h| h.forward(g, p, fused))
            .collect::<Result<Vec<_>>>()?;

        let mut marginals = [fused; 3];
        for (slot, (proj, h)) in marginals.iter_mut().zip(l.marginals.iter().zip(&hidden)) {
            *slot = conditional_prob(g, p, proj, *h)?;
        }

        let (conditionals, purchase_raw) = match &l.purchase {
            None => {
                let h_purchase = hidden[3];
                let mut q = [fused; 3];
                for (slot, (head, h)) in q.iter_mut().zip(l.conditionals.iter().zip(&hidden)) {
                    let fused_state = head.fusion.forward(g, p, *h, h_purchase)?;
                    *slot = conditional_prob(g, p, &head.projection, fused_state)?;
                }
                let raw = total_probability(g, marginals, q)?;
                (Some(q), raw)
            }
            Some(proj) => (None, conditional_prob(g, p, proj, hidden[3])?),
        };
        let purchase = g.clamp(purchase_raw, PROB_MIN, PROB_MAX);
        let order_volume = l.order_volume.forward(g, p, fused)?;
        Ok(ForwardOutputs {
            marginals,
            conditionals,
            purchase_raw,
            purchase,
            order_volume,
        })
    }

    pub fn task_losses(&self, g: &mut Graph, out: &ForwardOutputs, batch: &Batch) -> Result<TaskLosses> {
        let mut classification = [out.purchase; 4];
        let probs = [out.marginals[0], out.marginals[1], out.marginals[2], out.purchase];
        for ((slot, prob), b) in classification.iter_mut().zip(probs).zip(Behavior::ALL) {
            let y = g.constant(batch.label(b).clone());
            *slot = loss::bce(g, prob, y)?;
        }
        let target = g.constant(batch.order_volume.clone());
        let regression = loss::mse(g, out.order_volume, target)?;
        Ok(TaskLosses {
            classification,
            regression,
        })
    }

    /// Reads a forward pass back into per-example numbers.
    pub fn collect(&self, g: &Graph, out: &ForwardOutputs) -> Vec<TaskOutputs> {
        let [pb, pc, pa] = out.marginals.map(|v| read_column(g, v));
        let q = out.conditionals.map(|qs| qs.map(|v| read_column(g, v)));
        let raw = read_column(g, out.purchase_raw);
        let purchase = read_column(g, out.purchase);
        let ov = read_column(g, out.order_volume);
        (0..pb.len())
            .map(|i| TaskOutputs {
                p_browse: pb[i],
                p_collect: pc[i],
                p_cart: pa[i],
                conditionals: q.as_ref().map(|q| [q[0][i], q[1][i], q[2][i]]),
                p_purchase_raw: raw[i],
                p_purchase: purchase[i],
                ov_pred: ov[i],
            })
            .collect()
    }
}

impl MultiTaskModel for TpgDnn {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<LossOutput> {
        let out = self.forward(g, p, batch)?;
        let losses = self.task_losses(g, &out, batch)?;
        let (total, breakdown) = loss::combine(g, self.scheme, &losses, p[self.layout.log_variances])?;
        Ok(LossOutput { total, breakdown })
    }

    fn predict(&self, batch: &Batch) -> Result<Vec<TaskOutputs>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, batch)?;
        Ok(self.collect(&g, &out))
    }
}
