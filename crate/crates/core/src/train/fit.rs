use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, mean_ap};
use super::sgd::{sgd_step, HParams, Velocity};
use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, scores_from_logits, Model, ModelConfig, Task};
use crate::ops::{self, Mode};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Rng, Tensor};

const EVAL_BATCH: usize = 64;
/// Salt separating the batch-order stream from the initialization stream.
const ORDER_STREAM: u64 = 0x0bad_5eed;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    /// Evaluated once after the last epoch.
    pub eval_set: Option<&'a FeatureDataset>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// mAP of the train-mode scores seen during the epoch.
    pub train_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub loss: f64,
    pub map: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub skipped_classes: usize,
    /// Top-1 accuracy for single-label tasks.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelConfig,
    pub hparams: HParams,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_loss: f64,
    pub final_train_map: Option<f64>,
    pub eval: Option<EvalReport>,
    /// Excluded from reproducibility comparisons.
    pub wall_seconds: f64,
}

impl RunReport {
    /// Copy with timing zeroed, for bitwise comparisons between runs.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

fn check_dims<T>(model: &Model<T>, data: &FeatureDataset) -> Result<()> {
    let c = &model.config;
    let d = data.dims;
    if d.steps != c.time_steps
        || d.spatial != c.spatial
        || d.channels != c.input_channels()
        || data.classes != c.classes
    {
        return Err(Error::Config(format!(
            "dataset dims {:?} with {} classes do not match model (T={}, L={}, C={}, K={})",
            d,
            data.classes,
            c.time_steps,
            c.spatial,
            c.input_channels(),
            c.classes
        )));
    }
    Ok(())
}

fn task_loss<'t, T: Element>(
    task: Task,
    logits: Var<'t, T>,
    targets: &Tensor<T>,
    data: &FeatureDataset,
    indices: &[usize],
) -> Result<Var<'t, T>> {
    match task {
        Task::Multilabel => ops::bce_with_logits(logits, targets),
        Task::Multiclass => ops::softmax_ce(logits, &data.class_indices(indices)?),
    }
}

/// Mini-batch SGD over `data` for `hp.epochs` epochs.
pub fn train<T: Element>(
    model: &mut Model<T>,
    data: &FeatureDataset,
    hp: &HParams,
    opts: &TrainOptions<'_>,
) -> Result<RunReport> {
    hp.validate()?;
    check_dims(model, data)?;
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let started = Instant::now();
    let mut batch_size = hp.batch_size;
    if batch_size > data.len() {
        log::warn!(
            "batch size {batch_size} exceeds {} samples; clamping",
            data.len()
        );
        batch_size = data.len();
    }
    let task = model.config.task;
    let classes = model.config.classes;
    let mut order_rng = Rng::new(hp.seed ^ ORDER_STREAM);
    let mut velocity = Velocity::zeros_like(&model.store);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut scores: Vec<f64> = Vec::with_capacity(data.len() * classes);
        let mut labels: Vec<u8> = Vec::with_capacity(data.len() * classes);
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                // batch statistics need two samples
                continue;
            }
            let (x, y) = data.batch::<T>(chunk)?;
            let tape = Tape::new();
            let bound = model.store.bind(&tape);
            let xv = tape.leaf(x);
            let mut norms = std::mem::take(&mut model.norms);
            let logits = model.forward(xv, &bound, &mut norms, Mode::Train);
            model.norms = norms;
            let logits = logits?;
            let loss = task_loss(task, logits, &y, data, chunk)?;
            let loss_value = loss.value().item()?.f64();
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!("loss is {loss_value} at epoch {epoch}")));
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = bound.0.iter().map(|&v| grads.get_or_zeros(v)).collect();
            sgd_step(&mut model.store, &grads, &mut velocity, hp)?;

            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
            let s = scores_from_logits(&logits.value(), task)?;
            scores.extend(s.data().iter().map(|v| v.f64()));
            labels.extend(y.data().iter().map(|v| v.f64() as u8));
        }
        let loss = loss_sum / seen.max(1) as f64;
        let train_map = mean_ap(&scores, &labels, classes).ok().map(|m| m.value);
        log::debug!("epoch {epoch}: loss {loss:.5} train mAP {train_map:?}");
        epochs.push(EpochRecord {
            epoch,
            loss,
            train_map,
        });
    }

    let eval = opts.eval_set.map(|d| evaluate(model, d)).transpose()?;
    if let Some(path) = &opts.checkpoint {
        save_checkpoint(model, path)?;
    }
    let last = epochs.last();
    Ok(RunReport {
        model: model.config.clone(),
        hparams: hp.clone(),
        seed: hp.seed,
        final_loss: last.map_or(f64::NAN, |e| e.loss),
        final_train_map: last.and_then(|e| e.train_map),
        epochs,
        eval,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Eval-mode scores for every sample, row-major `[N, K]`.
pub fn predict_dataset<T: Element>(model: &Model<T>, data: &FeatureDataset) -> Result<Vec<f64>> {
    check_dims(model, data)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let parts = all
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let (x, _) = data.batch::<T>(chunk)?;
            Ok(model.predict_scores(&x)?.data().iter().map(|v| v.f64()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

pub fn evaluate<T: Element>(model: &Model<T>, data: &FeatureDataset) -> Result<EvalReport> {
    check_dims(model, data)?;
    if data.is_empty() {
        return Err(Error::UndefinedMetric("empty evaluation set".into()));
    }
    let task = model.config.task;
    let classes = model.config.classes;
    let all: Vec<usize> = (0..data.len()).collect();
    // chunks run in parallel; results are combined in chunk order so the
    // report does not depend on the thread count
    let parts = all
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let (x, y) = data.batch::<T>(chunk)?;
            let tape = Tape::no_grad();
            let bound = model.store.bind(&tape);
            let mut norms = model.norms.clone();
            let logits = model.forward(tape.leaf(x), &bound, &mut norms, Mode::Eval)?;
            let loss = task_loss(task, logits, &y, data, chunk)?.value().item()?.f64();
            let s = scores_from_logits(&logits.value(), task)?;
            Ok((loss * chunk.len() as f64, s.data().iter().map(|v| v.f64()).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(data.len() * classes);
    let mut loss_sum = 0.0;
    for (loss, s) in parts {
        loss_sum += loss;
        scores.extend(s);
    }
    let labels: Vec<u8> = data.samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let m = mean_ap(&scores, &labels, classes)?;
    let acc = match task {
        Task::Multiclass => Some(accuracy(&scores, &data.class_indices(&all)?, classes)?),
        Task::Multilabel => None,
    };
    Ok(EvalReport {
        samples: data.len(),
        loss: loss_sum / data.len() as f64,
        map: m.value,
        per_class_ap: m.per_class,
        skipped_classes: m.skipped,
        accuracy: acc,
    })
}
