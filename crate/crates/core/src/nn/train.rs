use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::{argmax_rows, softmax_cross_entropy};
use super::network::{network_backward, network_forward, ModelParams, NetworkConfig};
use super::schedule::{PlateauController, PlateauEvent, TrainSchedule};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// In-memory labeled samples, each `T×Hb×Wb×C`.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape(&[inputs.len()], &[labels.len()]));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::shape(first.shape(), bad.shape()));
            }
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Sample shape as `[T, Hb, Wb, C]`.
    pub fn sample_dims(&self) -> Option<[usize; 4]> {
        self.inputs.first().and_then(|t| t.shape().try_into().ok())
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let refs: Vec<&Tensor> = idx.iter().map(|&i| &self.inputs[i]).collect();
        Ok((Tensor::stack(&refs)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr_reduced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Diverged,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Chunk size used when only forward passes are needed.
const EVAL_CHUNK: usize = 32;

/// Mean loss and accuracy over a dataset.
pub fn dataset_loss(params: &ModelParams, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk)?;
        let logits = network_forward(params, &x)?;
        let (l, _) = softmax_cross_entropy(&logits, &y)?;
        loss += l * chunk.len() as f64;
        correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub total: usize,
    pub correct: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax classification accuracy and confusion matrix.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let k = params.config.classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk)?;
        let logits = network_forward(params, &x)?;
        for (pred, truth) in argmax_rows(&logits).into_iter().zip(y) {
            if truth >= k {
                return Err(Error::InvalidArgument(format!(
                    "label {truth} out of range for {k} classes"
                )));
            }
            confusion[truth][pred] += 1;
        }
    }
    let correct = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        total: data.len(),
        correct,
        confusion,
    })
}

/// Train from `init` with ADAM under the plateau/early-stop schedule.
///
/// Shuffling is seeded per epoch; everything runs on one thread so identical
/// inputs give identical histories.
pub fn train_from(
    init: ModelParams,
    train: &Dataset,
    val: &Dataset,
    schedule: &TrainSchedule,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    let want = init.config.input;
    for (name, d) in [("train", train), ("val", val)] {
        if d.sample_dims() != Some(want) {
            return Err(Error::Geometry(format!(
                "{name} samples are {:?}, network expects {want:?}",
                d.sample_dims()
            )));
        }
    }

    let mut params = init;
    let mut adam = AdamState::new(params.tensors());
    let mut ctl = PlateauController::new(schedule);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=schedule.max_epochs {
        let lr = ctl.lr();
        Rng::derive(seed, epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(schedule.batch_size) {
            let (x, y) = train.batch(chunk)?;
            let g = network_backward(&params, &x, &y)?;
            if !g.loss.is_finite() {
                return diverged(best, history, best_epoch);
            }
            loss_sum += g.loss * chunk.len() as f64;
            correct += argmax_rows(&g.logits).iter().zip(&y).filter(|(p, t)| p == t).count();
            if adam_step(params.tensors_mut(), &g.grads, &mut adam, lr).is_err() {
                return diverged(best, history, best_epoch);
            }
        }
        let (val_loss, val_accuracy) = dataset_loss(&params, val)?;
        if !val_loss.is_finite() {
            return diverged(best, history, best_epoch);
        }
        let event = ctl.observe(val_loss);
        if event == PlateauEvent::Improved {
            best = params.clone();
            best_epoch = epoch;
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
            lr_reduced: event == PlateauEvent::LrReduced,
        };
        on_epoch(&record);
        history.push(record);
        if event == PlateauEvent::Stop {
            return Ok(TrainOutcome {
                params: best,
                history,
                best_epoch,
                stop: StopReason::EarlyStop,
            });
        }
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
        stop: StopReason::MaxEpochs,
    })
}

fn diverged(best: ModelParams, history: Vec<EpochRecord>, best_epoch: usize) -> Result<TrainOutcome> {
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
        stop: StopReason::Diverged,
    })
}

/// Initialize a fresh network for `config` and train it.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    config: &NetworkConfig,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome> {
    let init = ModelParams::init(config, seed)?;
    train_from(init, train_set, val_set, schedule, seed, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two classes separated by the sign of the mean input.
    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let shift = if label == 1 { 0.8 } else { -0.8 };
            let data = (0..2 * 2 * 2 * 3).map(|_| shift + 0.3 * rng.gaussian()).collect();
            inputs.push(Tensor::from_vec(&[2, 2, 2, 3], data).unwrap());
            labels.push(label);
        }
        Dataset::new(inputs, labels).unwrap()
    }

    fn tiny_config() -> NetworkConfig {
        NetworkConfig::new([2, 2, 2, 3], 2).halved().halved()
    }

    #[test]
    fn learns_a_separable_toy_task() {
        let schedule = TrainSchedule {
            lr: 1e-2,
            batch_size: 8,
            max_epochs: 15,
            ..TrainSchedule::default()
        };
        let out = train(&toy(64, 1), &toy(32, 2), &tiny_config(), &schedule, 3).unwrap();
        let eval = evaluate(&out.params, &toy(32, 4)).unwrap();
        assert!(eval.accuracy > 0.9, "accuracy {}", eval.accuracy);
        assert_eq!(out.history.len(), 15);
        assert_eq!(out.stop, StopReason::MaxEpochs);
    }

    #[test]
    fn deterministic_history() {
        let schedule = TrainSchedule {
            batch_size: 8,
            max_epochs: 3,
            ..TrainSchedule::default()
        };
        let a = train(&toy(32, 1), &toy(16, 2), &tiny_config(), &schedule, 9).unwrap();
        let b = train(&toy(32, 1), &toy(16, 2), &tiny_config(), &schedule, 9).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_splits_rejected() {
        let schedule = TrainSchedule::default();
        assert!(train(&Dataset::default(), &toy(4, 1), &tiny_config(), &schedule, 1).is_err());
        assert!(train(&toy(4, 1), &Dataset::default(), &tiny_config(), &schedule, 1).is_err());
    }

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let params = ModelParams::init(&tiny_config(), 5).unwrap();
        let data = toy(20, 6);
        let eval = evaluate(&params, &data).unwrap();
        assert_eq!(eval.confusion[0].iter().sum::<usize>(), 10);
        assert_eq!(eval.confusion[1].iter().sum::<usize>(), 10);
        assert!((0.0..=1.0).contains(&eval.accuracy));
    }

    #[test]
    fn diverging_run_is_reported() {
        let schedule = TrainSchedule {
            batch_size: 4,
            max_epochs: 3,
            ..TrainSchedule::default()
        };
        let mut data = toy(16, 1);
        data.inputs[5].data_mut()[0] = f64::INFINITY;
        let out = train(&data, &data, &tiny_config(), &schedule, 1).unwrap();
        assert_eq!(out.stop, StopReason::Diverged);
    }
}
