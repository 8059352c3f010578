use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamState};
use super::model::{loss_and_gradients, ModelParams, SequenceTensor};
use crate::dataset::{SplitDataset, TrajectoryWindow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // 3973 training windows / 132 = 30 full batches per epoch, 900 in total.
        Self { epochs: 30, batch_size: 132, learning_rate: 0.01, seed: 2024 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "epochs, batch size and learning rate must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    /// 1-based.
    pub iteration: usize,
    /// 1-based.
    pub epoch: usize,
    /// RMSE of the batch before the update.
    pub batch_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ModelParams,
    pub log: Vec<TrainLogRow>,
}

fn tensors(windows: &[TrajectoryWindow]) -> Vec<(SequenceTensor, SequenceTensor)> {
    windows
        .iter()
        .map(|w| (SequenceTensor::from_points(&w.history), SequenceTensor::from_points(&w.future)))
        .collect()
}

/// Mini-batch Adam over the training split in stored order, dropping the
/// trailing partial batch of every epoch.
pub fn train(model: ModelParams, dataset: &SplitDataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let samples = tensors(&dataset.train);
    let batches = samples.len() / config.batch_size;
    if batches == 0 {
        return Err(Error::InvalidInput(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            samples.len()
        )));
    }
    let mut model = model;
    let mut adam = AdamState::new(&model);
    let mut log = Vec::with_capacity(config.epochs * batches);
    for epoch in 1..=config.epochs {
        for chunk in samples.chunks_exact(config.batch_size) {
            let pairs: Vec<_> = chunk.iter().map(|(h, f)| (h, f)).collect();
            let (mse, grads) = loss_and_gradients(&model, &pairs)?;
            adam_update(&mut adam, &mut model, &grads, config.learning_rate);
            log.push(TrainLogRow { iteration: log.len() + 1, epoch, batch_rmse: mse.sqrt() });
        }
    }
    Ok(TrainReport { model, log })
}

pub fn write_train_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["iteration", "epoch", "batch_rmse"])?;
    for row in log {
        w.write_record([row.iteration.to_string(), row.epoch.to_string(), row.batch_rmse.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Pooled over every coordinate of every sample.
    pub overall_rmse: f64,
    pub per_sample: Vec<f64>,
}

const EVAL_CHUNK: usize = 256;

pub fn evaluate(model: &ModelParams, windows: &[TrajectoryWindow]) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut per_sample = Vec::with_capacity(windows.len());
    let mut sse = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(EVAL_CHUNK) {
        let pairs = tensors(chunk);
        let histories: Vec<_> = pairs.iter().map(|(h, _)| h).collect();
        for (pred, (_, truth)) in model.predict_batch(&histories).iter().zip(&pairs) {
            let mse = super::model::mse_loss(pred, truth)?;
            sse += mse * truth.data.len() as f64;
            count += truth.data.len();
            per_sample.push(mse.sqrt());
        }
    }
    Ok(EvalReport { overall_rmse: (sse / count as f64).sqrt(), per_sample })
}
