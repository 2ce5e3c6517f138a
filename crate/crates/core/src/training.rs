//! Minibatch AdaGrad on the joint loss, with early stopping on dev accuracy.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::metrics::{accuracy_multigold, f1_binary, macro_f1, resolve_gold};
use crate::data::{Instance, TaskMode};
use crate::error::{Error, Result};
use crate::layers::Forward;
use crate::model::{Model, Resources};
use crate::tensor::{AdaGrad, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub embedding_dropout: f64,
    pub encoder_dropout: f64,
    pub classifier_dropout: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Stops after this many optimizer steps, mid-epoch if need be.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 64,
            embedding_dropout: 0.4,
            encoder_dropout: 0.4,
            classifier_dropout: 0.3,
            epochs: 100,
            patience: 10,
            seed: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Names the first invalid key.
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("train.embedding_dropout", self.embedding_dropout),
            ("train.encoder_dropout", self.encoder_dropout),
            ("train.classifier_dropout", self.classifier_dropout),
        ];
        for (key, r) in rates {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(key, format!("{r} is outside [0, 1)")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Joint loss over the whole training split at the epoch's final
    /// parameters, dropout off.
    pub train_loss: f64,
    /// Mean of the minibatch losses seen during the epoch, dropout on.
    pub batch_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub steps: usize,
}

/// `epoch,train_loss,dev_accuracy` rows; floats print in shortest round-trip form.
pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_accuracy\n");
    for r in trace {
        writeln!(out, "{},{:?},{:?}", r.epoch, r.train_loss, r.dev_accuracy).unwrap();
    }
    out
}

/// Dropout seed of one step; distinct steps get unrelated masks.
fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step as u64).wrapping_add(1)
}

/// Mean joint loss over `data` with training semantics and no dropout.
pub fn training_objective(model: &Model, res: &Resources, data: &[Instance], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let tape = Tape::new();
        let fwd = Forward::train_without_dropout(&tape, &model.params);
        let loss = model.joint_loss(&fwd, res, chunk)?.total.value().data()[0];
        total += loss * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// One optimizer step on `batch`; returns the batch's joint loss.
pub fn train_step(
    model: &mut Model,
    res: &Resources,
    batch: &[Instance],
    optimizer: &AdaGrad,
    dropout_seed: u64,
) -> Result<f64> {
    let tape = Tape::new();
    let (loss, grads) = {
        let fwd = Forward::train(&tape, &model.params, dropout_seed);
        let loss = model.joint_loss(&fwd, res, batch)?.total;
        let value = loss.value().data()[0];
        (value, tape.backward(loss)?)
    };
    if !loss.is_finite() {
        return Ok(loss);
    }
    model.params.accumulate(&tape, &grads);
    optimizer.step(&mut model.params)?;
    Ok(loss)
}

/// Trains in place and leaves the best-dev parameters in `model`.
///
/// An epoch improves on the best only with strictly higher dev accuracy;
/// training stops once more than `patience` epochs pass without improvement.
pub fn train(
    model: &mut Model,
    res: &Resources,
    train: &[Instance],
    dev: &[Instance],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Data("dev split is empty".into()));
    }
    let optimizer = AdaGrad::new(config.learning_rate, 1e-8);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut step = 0;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let batch: Vec<Instance> = chunk.iter().map(|&i| train[i].clone()).collect();
            let loss = train_step(model, res, &batch, &optimizer, step_seed(config.seed, step))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            total += loss * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }
        if seen == 0 {
            break;
        }
        let train_loss = training_objective(model, res, train, config.batch_size)?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step,
                loss: train_loss,
            });
        }
        let dev_accuracy = evaluate(model, res, dev, config.batch_size)?.accuracy;
        trace.push(EpochRecord {
            epoch,
            train_loss,
            batch_loss: total / seen as f64,
            dev_accuracy,
        });
        match &best {
            Some((_, acc, _)) if dev_accuracy <= *acc => {}
            _ => {
                let snapshot = model.params.iter().map(|(_, p)| p.tensor.clone()).collect();
                best = Some((epoch, dev_accuracy, snapshot));
            }
        }
        let since_best = epoch - best.as_ref().map_or(0, |b| b.0);
        if since_best > config.patience || config.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }

    let (best_epoch, best_dev_accuracy, snapshot) =
        best.ok_or_else(|| Error::Data("no training step was taken".into()))?;
    for (p, t) in model.params.iter_mut().zip(snapshot) {
        p.tensor = t;
    }
    Ok(TrainOutcome {
        trace,
        best_epoch,
        best_dev_accuracy,
        steps: step,
    })
}

/// Predictions and the task's headline metric on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    /// Multi-gold accuracy as a fraction.
    pub accuracy: f64,
    /// Name of the task metric: `accuracy`, `macro_f1`, or `f1`.
    pub metric: String,
    /// Task metric; accuracy as a fraction, F1 scores in percent.
    pub value: f64,
    pub predictions: Vec<usize>,
}

/// Headline metric of `mode`: accuracy for eleven-way, macro-F1 for four-way,
/// positive-class F1 for binary. Multi-gold sets resolve toward the prediction.
pub fn task_metric(mode: &TaskMode, classes: usize, pred: &[usize], gold: &[Vec<usize>]) -> Result<(String, f64)> {
    Ok(match mode {
        TaskMode::ElevenWay => ("accuracy".into(), accuracy_multigold(pred, gold)?),
        TaskMode::FourWay => ("macro_f1".into(), macro_f1(pred, &resolve_gold(pred, gold), classes)),
        TaskMode::Binary(_) => ("f1".into(), f1_binary(pred, &resolve_gold(pred, gold))),
    })
}

/// Inference over `data` in chunks of `batch_size`.
pub fn evaluate(
    model: &Model,
    res: &Resources,
    data: &[Instance],
    batch_size: usize,
) -> Result<EvalReport> {
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        predictions.extend(model.predict_batch(res, chunk)?.into_iter().map(|p| p.label));
    }
    let gold: Vec<Vec<usize>> = data.iter().map(|i| i.labels.clone()).collect();
    let accuracy = accuracy_multigold(&predictions, &gold)?;
    let (metric, value) = task_metric(&model.labels.mode, model.labels.len(), &predictions, &gold)?;
    Ok(EvalReport {
        instances: data.len(),
        accuracy,
        metric,
        value,
        predictions,
    })
}
