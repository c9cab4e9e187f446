//! Finite-difference checks over every differentiable building block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, FunnelWorld, GeneratorConfig};
use crate::error::Result;
use crate::loss::{self, LossScheme, TaskLosses};
use crate::model::{conditional_prob, InputSpec, ModelConfig, MultiTaskModel, PurchaseHead, TpgDnn};
use crate::nn::{
    attention, Bound, Cin, Embedding, FieldSchema, Init, Linear, MultiHeadAttention, ParamStore, Pooling,
    ResidualBlock, SequenceEncoder,
};
use crate::model::GruFusion;
use crate::tensor::{grad_check, Graph, Tensor, Var};

/// Step used by every check.
pub const GRAD_CHECK_EPS: f64 = 1e-5;
/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for layers and the composed loss.
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    /// Worst relative error over all instances.
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Contracts `out` against fixed weights so every output entry matters.
fn readout(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.reshaped(g.shape(out))?);
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

/// Appends a store's tensors to `inputs`; the closure reads them back from
/// the tail of its variable list.
fn with_params(mut inputs: Vec<Tensor>, store: &ParamStore) -> (Vec<Tensor>, usize) {
    let start = inputs.len();
    inputs.extend(store.values());
    (inputs, start)
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Case)> {
    let mut cases: Vec<(&'static str, Case)> = Vec::new();
    let shape = [3, 4];
    let w = uniform(rng, &[12], 0.5, 1.5);

    macro_rules! unary {
        ($name:literal, $input:expr, |$g:ident, $x:ident| $body:expr) => {{
            let w = w.clone();
            cases.push((
                $name,
                (
                    vec![$input],
                    Box::new(move |$g: &mut Graph, v: &[Var]| {
                        let $x = v[0];
                        let out = $body;
                        readout($g, out, &w)
                    }),
                ),
            ));
        }};
    }
    macro_rules! binary {
        ($name:literal, |$g:ident, $a:ident, $b:ident| $body:expr) => {{
            let w = w.clone();
            cases.push((
                $name,
                (
                    vec![normal(rng, &shape), normal(rng, &shape)],
                    Box::new(move |$g: &mut Graph, v: &[Var]| {
                        let ($a, $b) = (v[0], v[1]);
                        let out = $body;
                        readout($g, out, &w)
                    }),
                ),
            ));
        }};
    }

    binary!("add", |g, a, b| g.add(a, b)?);
    binary!("sub", |g, a, b| g.sub(a, b)?);
    binary!("mul", |g, a, b| g.mul(a, b)?);
    binary!("add_n", |g, a, b| {
        let ab = g.mul(a, b)?;
        g.add_n(&[a, b, ab])?
    });
    unary!("scale_shift", normal(rng, &shape), |g, x| {
        let s = g.scale(x, -1.7);
        g.shift(s, 0.3)
    });
    unary!("sigmoid", normal(rng, &shape), |g, x| g.sigmoid(x));
    unary!("tanh", normal(rng, &shape), |g, x| g.tanh(x));
    unary!("exp", normal(rng, &shape), |g, x| g.exp(x));
    unary!("log", uniform(rng, &shape, 0.2, 3.0), |g, x| g.log(x)?);
    unary!("clamp", uniform(rng, &shape, 0.1, 0.9), |g, x| g.clamp(x, 0.0, 1.0));
    unary!("softmax", normal(rng, &shape), |g, x| g.softmax(x));
    unary!("reshape_slice", normal(rng, &shape), |g, x| {
        let r = g.reshape(x, &[4, 3])?;
        let s = g.slice(r, 1, 1, 2)?;
        let c = g.concat(&[s, r], 1)?;
        g.slice(c, 1, 0, 3)?
    });
    unary!("sum_mean_axis", normal(rng, &shape), |g, x| {
        let s = g.sum_axis(x, 0)?;
        let s = g.reshape(s, &[1, 4])?;
        let m = g.mean_axis(x, 1)?;
        let m = g.reshape(m, &[3, 1])?;
        let sm = g.matmul(m, s)?;
        g.reshape(sm, &shape)?
    });
    unary!("max_axis", normal(rng, &shape), |g, x| {
        let m = g.max_axis(x, 1)?;
        let m = g.reshape(m, &[3, 1])?;
        let wide = g.concat(&[m, m, m, m], 1)?;
        g.mul(wide, x)?
    });

    {
        let w = w.clone();
        let a = normal(rng, &[3, 5]);
        let b = normal(rng, &[5, 4]);
        cases.push((
            "matmul",
            (
                vec![a, b],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let out = g.matmul(v[0], v[1])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let w = uniform(rng, &[2 * 3 * 3], 0.5, 1.5);
        let a = normal(rng, &[2, 3, 4]);
        let b = normal(rng, &[2, 3, 4]);
        cases.push((
            "bmm",
            (
                vec![a, b],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let ab = g.bmm(v[0], v[1], true)?;
                    let out = g.bmm(ab, v[1], false)?;
                    let out = g.bmm(out, v[0], true)?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let w = uniform(rng, &[2 * 4], 0.5, 1.5);
        let x = normal(rng, &[2, 3]);
        let bias = normal(rng, &[4]);
        let mat = normal(rng, &[3, 4]);
        cases.push((
            "add_broadcast",
            (
                vec![x, bias, mat],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let xm = g.matmul(v[0], v[2])?;
                    let out = g.add_broadcast(xm, v[1])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let w = w.clone();
        // Keep inputs away from the kink.
        let mut x = normal(rng, &shape);
        x.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
        cases.push((
            "prelu",
            (
                vec![x, Tensor::scalar(0.25)],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let out = g.prelu(v[0], v[1])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let w = uniform(rng, &[5 * 3], 0.5, 1.5);
        let table = normal(rng, &[4, 3]);
        cases.push((
            "gather",
            (
                vec![table],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let out = g.gather(v[0], &[2, 0, 2, 3, 1])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let w = uniform(rng, &[2 * 3 * 6], 0.5, 1.5);
        let a = normal(rng, &[2, 3, 2]);
        let b = normal(rng, &[2, 3, 3]);
        cases.push((
            "pairwise_hadamard",
            (
                vec![a, b],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let out = g.pairwise_hadamard(v[0], v[1])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    cases
}

fn layer_cases(rng: &mut ChaCha8Rng, seed: u64) -> Result<Vec<(&'static str, Case)>> {
    let mut cases: Vec<(&'static str, Case)> = Vec::new();
    let mut init = Init::new(seed);
    let (b, d, m) = (2, 3, 4);

    {
        let mut store = ParamStore::new();
        let cards = [3, 5, 2, 4];
        let emb = Embedding::new(&mut store, &mut init, "e", FieldSchema::new(&cards, d)?);
        let rows: Vec<Vec<usize>> = cards.iter().map(|&c| (0..b).map(|i| (i * 7 + 1) % c).collect()).collect();
        let w = uniform(rng, &[b * d * m], 0.5, 1.5);
        let (inputs, start) = with_params(Vec::new(), &store);
        cases.push((
            "embedding",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let p = Bound::from_vars(v[start..].to_vec());
                    let out = emb.forward(g, &p, &rows)?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, &mut init, "l", 4, 3);
        let w = uniform(rng, &[b * 3], 0.5, 1.5);
        let (inputs, start) = with_params(vec![normal(rng, &[b, 4])], &store);
        cases.push((
            "linear",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let p = Bound::from_vars(v[start..].to_vec());
                    let out = lin.forward(g, &p, v[0])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, &mut init, "r", 4, 5);
        let w = uniform(rng, &[b * 4], 0.5, 1.5);
        let (inputs, start) = with_params(vec![normal(rng, &[b, 4])], &store);
        cases.push((
            "residual_block",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let p = Bound::from_vars(v[start..].to_vec());
                    let out = block.forward(g, &p, v[0])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let mut store = ParamStore::new();
        let cin = Cin::new(&mut store, &mut init, "c", m, &[3, 2], Pooling::Sum)?;
        let w = uniform(rng, &[b * 5], 0.5, 1.5);
        let (inputs, start) = with_params(vec![normal(rng, &[b, d, m])], &store);
        cases.push((
            "cin",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let p = Bound::from_vars(v[start..].to_vec());
                    let out = cin.forward(g, &p, v[0])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let w = uniform(rng, &[b * 3 * 2], 0.5, 1.5);
        let inputs = vec![normal(rng, &[b, 3, 4]), normal(rng, &[b, 5, 4]), normal(rng, &[b, 5, 2])];
        cases.push((
            "attention",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let out = attention(g, v[0], v[1], v[2])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut init, "a", 4, 2)?;
        let w = uniform(rng, &[b * 3 * 4], 0.5, 1.5);
        let (inputs, start) = with_params(vec![normal(rng, &[b, 3, 4])], &store);
        cases.push((
            "multi_head_attention",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let p = Bound::from_vars(v[start..].to_vec());
                    let out = mha.forward(g, &p, v[0])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let mut store = ParamStore::new();
        let enc = SequenceEncoder::new(&mut store, &mut init, "s", 2, 4, 2, true)?;
        let w = uniform(rng, &[b * 4], 0.5, 1.5);
        let (inputs, start) = with_params(vec![uniform(rng, &[b, 3, 2], 0.0, 2.0)], &store);
        cases.push((
            "sequence_encoder",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let p = Bound::from_vars(v[start..].to_vec());
                    let out = enc.forward(g, &p, v[0])?;
                    readout(g, out, &w)
                }),
            ),
        ));
    }
    {
        let mut store = ParamStore::new();
        let fusion = GruFusion::new(&mut store, &mut init, "f", 3);
        let proj = Linear::new(&mut store, &mut init, "q", 3, 1);
        let (inputs, start) = with_params(vec![normal(rng, &[b, 3]), normal(rng, &[b, 3])], &store);
        cases.push((
            "gru_fusion",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let p = Bound::from_vars(v[start..].to_vec());
                    let fused = fusion.forward(g, &p, v[0], v[1])?;
                    let q = conditional_prob(g, &p, &proj, fused)?;
                    Ok(g.sum_all(q))
                }),
            ),
        ));
    }
    {
        let probs = uniform(rng, &[5, 5], 0.05, 0.95);
        let labels: Vec<f64> = (0..25).map(|i| ((i * 3 + seed as usize) % 2) as f64).collect();
        let labels = Tensor::new(vec![5, 5], labels)?;
        let targets = uniform(rng, &[5, 1], 0.0, 3.0);
        let inputs = vec![probs, normal(rng, &[5, 1]), normal(rng, &[5]).map(|s| 0.5 * s)];
        cases.push((
            "uncertainty_loss",
            (
                inputs,
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let mut cls = Vec::with_capacity(4);
                    for k in 0..4 {
                        let p = g.slice(v[0], 1, k, 1)?;
                        let y = g.constant(labels.clone());
                        let y = g.slice(y, 1, k, 1)?;
                        cls.push(loss::bce(g, p, y)?);
                    }
                    let t = g.constant(targets.clone());
                    let regression = loss::mse(g, v[1], t)?;
                    let losses = TaskLosses {
                        classification: [cls[0], cls[1], cls[2], cls[3]],
                        regression,
                    };
                    Ok(loss::uncertainty_combine(g, &losses, v[2])?.0)
                }),
            ),
        ));
    }
    Ok(cases)
}

/// The reduced network used for the end-to-end checks.
pub fn tiny_setup(seed: u64, head: PurchaseHead) -> Result<(TpgDnn, Batch)> {
    let data = GeneratorConfig {
        cardinalities: vec![3, 4, 2],
        short_len: 3,
        long_len: 2,
        channels: 2,
        trait_dim: 2,
        ..GeneratorConfig::default()
    };
    let world = FunnelWorld::new(&data)?;
    let records = world.population(seed, 0, 4)?;
    let config = ModelConfig {
        embedding_dim: 3,
        cin_layers: vec![2, 2],
        model_dim: 4,
        heads: 2,
        trunk_width: 6,
        hidden_dim: 3,
        purchase_head: head,
        ..ModelConfig::default()
    };
    let scheme = match head {
        PurchaseHead::TotalProbability => LossScheme::Uncertainty,
        PurchaseHead::Direct => LossScheme::EqualWeight,
    };
    let mut model = TpgDnn::new(config, InputSpec::from_generator(&data), scheme, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = model.params.get_mut(model.layout.log_variances);
    for v in s.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    Ok((model, Batch::from_slice(&records)?))
}

fn model_case(seed: u64, head: PurchaseHead) -> Result<Case> {
    let (model, batch) = tiny_setup(seed, head)?;
    let inputs = model.params().values();
    Ok((
        inputs,
        Box::new(move |g: &mut Graph, v: &[Var]| {
            let p = Bound::from_vars(v.to_vec());
            Ok(model.loss(g, &p, &batch)?.total)
        }),
    ))
}

/// Runs every check on `instances` seeded random instances and reports the
/// worst error per component.
pub fn grad_check_suite(seed: u64, instances: usize) -> Result<Vec<ComponentCheck>> {
    let mut report: Vec<ComponentCheck> = Vec::new();
    let mut record = |name: &str, err: f64, tolerance: f64| match report.iter_mut().find(|c| c.component == name) {
        Some(c) => c.max_relative_error = c.max_relative_error.max(err),
        None => report.push(ComponentCheck {
            component: name.to_string(),
            max_relative_error: err,
            tolerance,
        }),
    };
    for i in 0..instances as u64 {
        let instance_seed = seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
        for (name, (inputs, f)) in op_cases(&mut rng) {
            record(name, grad_check(f, &inputs, GRAD_CHECK_EPS)?, OP_TOLERANCE);
        }
        for (name, (inputs, f)) in layer_cases(&mut rng, instance_seed)? {
            record(name, grad_check(f, &inputs, GRAD_CHECK_EPS)?, COMPOSITE_TOLERANCE);
        }
        for (name, head) in [
            ("tpg_dnn_loss", PurchaseHead::TotalProbability),
            ("mtl_equal_loss", PurchaseHead::Direct),
        ] {
            let (inputs, f) = model_case(instance_seed, head)?;
            record(name, grad_check(f, &inputs, GRAD_CHECK_EPS)?, COMPOSITE_TOLERANCE);
        }
    }
    Ok(report)
}
