use serde::{Deserialize, Serialize};

use crate::data::{Batch, Behavior, ExampleRecord};
use crate::error::{Error, Result};
use crate::loss::{self, LossScheme, TaskLosses, PROB_MAX, PROB_MIN};
use crate::model::{InputSpec, LossOutput, ModelConfig, MultiTaskModel, PurchaseHead, TaskOutputs, TpgDnn};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::train::{train, RunConfig, TrainRun};

use super::report::{evaluate, MetricsReport};

/// Which network a run trains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    TpgDnn,
    /// Same trunk, direct sigmoid purchase head, equal task weights.
    MtlEqual,
    /// One logistic (or, for order volume, linear) model per task.
    Lr,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Lr, Variant::MtlEqual, Variant::TpgDnn];

    pub fn label(self) -> &'static str {
        match self {
            Variant::TpgDnn => "TPG-DNN",
            Variant::MtlEqual => "MTL-equal",
            Variant::Lr => "LR",
        }
    }

    /// Builds a freshly initialised model for this variant.
    pub fn build(self, model: &ModelConfig, input: &InputSpec, scheme: LossScheme, seed: u64) -> Result<AnyModel> {
        Ok(match self {
            Variant::TpgDnn => AnyModel::Tpg(TpgDnn::new(model.clone(), input.clone(), scheme, seed)?),
            Variant::MtlEqual => {
                let config = ModelConfig {
                    purchase_head: PurchaseHead::Direct,
                    ..model.clone()
                };
                AnyModel::Tpg(TpgDnn::new(config, input.clone(), LossScheme::EqualWeight, seed)?)
            }
            Variant::Lr => AnyModel::Linear(LinearBaseline::new(input.clone())?),
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tpg-dnn" => Ok(Variant::TpgDnn),
            "mtl-equal" => Ok(Variant::MtlEqual),
            "lr" => Ok(Variant::Lr),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

const TASKS: usize = 5;

/// Independent linear models for the five tasks over one-hot fields and
/// every (log-scaled) sequence entry.
///
/// The five models are packed column-wise: field `f` has a `[card_f, 5]`
/// weight table and the flattened sequences a `[t·d + T·d, 5]` matrix, so
/// column `k` only ever touches task `k`'s loss. Weights start at zero.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub input: InputSpec,
    pub tables: Vec<ParamId>,
    pub sequence: ParamId,
    pub bias: ParamId,
    pub params: ParamStore,
}

impl LinearBaseline {
    pub fn new(input: InputSpec) -> Result<Self> {
        if input.cardinalities.is_empty() || input.cardinalities.contains(&0) {
            return Err(Error::Config("every field needs a positive cardinality".into()));
        }
        let mut params = ParamStore::new();
        let tables = input
            .cardinalities
            .iter()
            .enumerate()
            .map(|(f, &card)| params.add(format!("lr.f{f}"), Tensor::zeros(&[card, TASKS])))
            .collect();
        let width = (input.short_len + input.long_len) * input.channels;
        let sequence = params.add("lr.sequence", Tensor::zeros(&[width, TASKS]));
        let bias = params.add("lr.bias", Tensor::zeros(&[TASKS]));
        Ok(LinearBaseline {
            input,
            tables,
            sequence,
            bias,
            params,
        })
    }

    /// `[B, 5]` raw scores: four logits then the order-volume prediction.
    pub fn scores(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<Var> {
        if batch.fields.len() != self.tables.len() {
            return Err(Error::dim(
                "lr",
                format!("{} fields, model has {}", batch.fields.len(), self.tables.len()),
            ));
        }
        let mut terms = Vec::with_capacity(self.tables.len() + 1);
        for (f, (&table, rows)) in self.tables.iter().zip(&batch.fields).enumerate() {
            let card = self.input.cardinalities[f];
            if let Some(bad) = rows.iter().find(|&&r| r >= card) {
                return Err(Error::Input(format!("field f{f}: index {bad} out of range 0..{card}")));
            }
            terms.push(g.gather(p[table], rows)?);
        }
        let b = batch.size;
        let short = g.constant(batch.short.clone());
        let short = g.reshape(short, &[b, batch.short.len() / b])?;
        let long = g.constant(batch.long.clone());
        let long = g.reshape(long, &[b, batch.long.len() / b])?;
        let seq = g.concat(&[short, long], 1)?;
        terms.push(g.matmul(seq, p[self.sequence])?);
        let sum = g.add_n(&terms)?;
        g.add_broadcast(sum, p[self.bias])
    }

    fn outputs(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<([Var; 4], Var)> {
        let scores = self.scores(g, p, batch)?;
        let mut probs = [scores; 4];
        for (k, slot) in probs.iter_mut().enumerate() {
            let logit = g.slice(scores, 1, k, 1)?;
            let prob = g.sigmoid(logit);
            *slot = g.clamp(prob, PROB_MIN, PROB_MAX);
        }
        let ov = g.slice(scores, 1, 4, 1)?;
        Ok((probs, ov))
    }
}

impl MultiTaskModel for LinearBaseline {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<LossOutput> {
        let (probs, ov) = self.outputs(g, p, batch)?;
        let mut classification = [ov; 4];
        for ((slot, prob), b) in classification.iter_mut().zip(probs).zip(Behavior::ALL) {
            let y = g.constant(batch.label(b).clone());
            *slot = loss::bce(g, prob, y)?;
        }
        let target = g.constant(batch.order_volume.clone());
        let regression = loss::mse(g, ov, target)?;
        let (total, breakdown) = loss::equal_weight_combine(
            g,
            &TaskLosses {
                classification,
                regression,
            },
        )?;
        Ok(LossOutput { total, breakdown })
    }

    fn predict(&self, batch: &Batch) -> Result<Vec<TaskOutputs>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let (probs, ov) = self.outputs(&mut g, &p, batch)?;
        let cols: Vec<&[f64]> = probs.iter().map(|v| g.value(*v).data()).collect();
        let ov = g.value(ov).data();
        Ok((0..batch.size)
            .map(|i| TaskOutputs {
                p_browse: cols[0][i],
                p_collect: cols[1][i],
                p_cart: cols[2][i],
                conditionals: None,
                p_purchase_raw: cols[3][i],
                p_purchase: cols[3][i],
                ov_pred: ov[i],
            })
            .collect())
    }
}

/// Any trainable variant.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Tpg(TpgDnn),
    Linear(LinearBaseline),
}

impl MultiTaskModel for AnyModel {
    fn params(&self) -> &ParamStore {
        match self {
            AnyModel::Tpg(m) => m.params(),
            AnyModel::Linear(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyModel::Tpg(m) => m.params_mut(),
            AnyModel::Linear(m) => m.params_mut(),
        }
    }

    fn loss(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<LossOutput> {
        match self {
            AnyModel::Tpg(m) => m.loss(g, p, batch),
            AnyModel::Linear(m) => m.loss(g, p, batch),
        }
    }

    fn predict(&self, batch: &Batch) -> Result<Vec<TaskOutputs>> {
        match self {
            AnyModel::Tpg(m) => m.predict(batch),
            AnyModel::Linear(m) => m.predict(batch),
        }
    }
}

/// A trained variant and its test-set report.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub run: TrainRun,
    pub report: MetricsReport,
}

/// Trains `variant` on `train_set` with the shared harness and scores it on
/// `test_set`. The variant in `config.train` is overridden.
pub fn run_baseline(
    variant: Variant,
    train_set: &[ExampleRecord],
    test_set: &[ExampleRecord],
    config: &RunConfig,
) -> Result<BaselineRun> {
    let mut config = config.clone();
    config.train.variant = variant;
    let input = InputSpec::from_generator(&config.data);
    let run = train(&config, &input, train_set)?;
    let report = evaluate(variant.label(), &run.model, test_set, config.eval.threshold)?;
    Ok(BaselineRun { run, report })
}
