//! Mini-batch training with Adam, checkpoints and per-epoch loss history.

mod adam;
mod checkpoint;
mod config;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{EvalConfig, RunConfig, TrainConfig};

use crate::data::{Batch, ExampleRecord};
use crate::error::{Error, Result};
use crate::eval::AnyModel;
use crate::loss::{LossBreakdown, TASK_NAMES};
use crate::model::{InputSpec, MultiTaskModel};
use crate::tensor::Graph;

/// Mean training loss over one epoch, plus the task variances at its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub variances: [f64; 5],
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: AnyModel,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// One optimiser step on one batch.
pub fn train_step<M: MultiTaskModel + ?Sized>(
    model: &mut M,
    optimizer: &mut AdamState,
    hyper: &AdamConfig,
    batch: &Batch,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let out = model.loss(&mut g, &bound, batch)?;
    g.backward(out.total)?;
    let grads = model.params().gradients(&g, &bound);
    adam_step(model.params_mut(), &grads, optimizer, hyper)?;
    Ok(out.breakdown)
}

/// One pass over `data` in an order fixed by `(seed, epoch)`.
pub fn train_epoch<M: MultiTaskModel + ?Sized>(
    model: &mut M,
    optimizer: &mut AdamState,
    config: &TrainConfig,
    data: &[ExampleRecord],
    epoch: usize,
) -> Result<EpochRecord> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);

    let hyper = config.adam();
    let mut steps = Vec::with_capacity(data.len().div_ceil(config.batch_size));
    for chunk in order.chunks(config.batch_size) {
        let records: Vec<&ExampleRecord> = chunk.iter().map(|&i| &data[i]).collect();
        steps.push(train_step(model, optimizer, &hyper, &Batch::new(&records)?)?);
    }
    let last = steps.last().expect("non-empty data").clone();
    Ok(EpochRecord {
        epoch: epoch + 1,
        loss: LossBreakdown::mean(&steps).expect("non-empty data"),
        variances: last.variances(),
    })
}

/// Trains the variant named in `config.train` from a fresh initialisation.
///
/// If an epoch fails numerically the parameters are rolled back to the last
/// completed epoch and returned inside [`Error::TrainingAborted`].
pub fn train(config: &RunConfig, input: &InputSpec, data: &[ExampleRecord]) -> Result<TrainRun> {
    let tc = &config.train;
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut model = tc.variant.build(&config.model, input, tc.loss_scheme, tc.seed)?;
    let mut optimizer = AdamState::new(model.params());
    let mut history = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        let saved_params = model.params().entries().to_vec();
        let saved_optimizer = optimizer.clone();
        match train_epoch(&mut model, &mut optimizer, tc, data, epoch) {
            Ok(record) => history.push(record),
            Err(err @ Error::Numeric(_)) => {
                model.params_mut().load(saved_params)?;
                let checkpoint = Checkpoint::capture(&config.model, input, tc, &model, &saved_optimizer, epoch);
                return Err(Error::TrainingAborted {
                    epoch: epoch + 1,
                    source: Box::new(err),
                    checkpoint: Box::new(checkpoint),
                });
            }
            Err(err) => return Err(err),
        }
    }
    let checkpoint = Checkpoint::capture(&config.model, input, tc, &model, &optimizer, tc.epochs);
    Ok(TrainRun {
        model,
        checkpoint,
        history,
    })
}

/// `epoch`, the five raw losses, five weights, regulariser, total, five σ².
pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch".to_string()];
    header.extend(TASK_NAMES.iter().map(|t| format!("loss_{t}")));
    header.extend(TASK_NAMES.iter().map(|t| format!("weight_{t}")));
    header.push("regularizer".into());
    header.push("total".into());
    header.extend(TASK_NAMES.iter().map(|t| format!("sigma2_{t}")));
    w.write_record(&header)?;
    for r in history {
        let mut row = vec![r.epoch.to_string()];
        row.extend(r.loss.raw().iter().map(f64::to_string));
        row.extend(r.loss.weights.iter().map(f64::to_string));
        row.push(r.loss.regularizer.to_string());
        row.push(r.loss.total.to_string());
        row.extend(r.variances.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
