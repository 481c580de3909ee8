//! Learning-rate plateau reduction and early stopping driven by validation loss.
//!
//! An epoch "improves" when its validation loss is strictly below the best
//! seen so far. After `plateau_patience` consecutive non-improving epochs the
//! learning rate is divided by `factor` (and the plateau counter restarts);
//! after `stop_patience` consecutive non-improving epochs training stops.
//! Both counters reset on improvement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub lr: f64,
    pub factor: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            lr: 1e-3,
            factor: 10.0,
            plateau_patience: 10,
            stop_patience: 22,
            batch_size: 16,
            max_epochs: 100,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.factor > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "plateau factor must exceed 1, got {}",
                self.factor
            )));
        }
        if self.plateau_patience == 0 || self.stop_patience == 0 {
            return Err(Error::InvalidArgument("patience values must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch size and max epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauEvent {
    Improved,
    Waiting,
    LrReduced,
    Stop,
}

#[derive(Debug, Clone)]
pub struct PlateauController {
    lr: f64,
    factor: f64,
    plateau_patience: usize,
    stop_patience: usize,
    best: f64,
    since_best: usize,
    since_reduce: usize,
}

impl PlateauController {
    pub fn new(schedule: &TrainSchedule) -> Self {
        PlateauController {
            lr: schedule.lr,
            factor: schedule.factor,
            plateau_patience: schedule.plateau_patience,
            stop_patience: schedule.stop_patience,
            best: f64::INFINITY,
            since_best: 0,
            since_reduce: 0,
        }
    }

    /// Learning rate for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feed one epoch's validation loss.
    pub fn observe(&mut self, val_loss: f64) -> PlateauEvent {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            self.since_reduce = 0;
            return PlateauEvent::Improved;
        }
        self.since_best += 1;
        self.since_reduce += 1;
        if self.since_best >= self.stop_patience {
            return PlateauEvent::Stop;
        }
        if self.since_reduce >= self.plateau_patience {
            self.since_reduce = 0;
            self.lr /= self.factor;
            return PlateauEvent::LrReduced;
        }
        PlateauEvent::Waiting
    }
}

/// Replay a validation-loss sequence (epoch 1 first).
///
/// Returns the epochs after which the lr was reduced and the epoch at which
/// training stopped, if it did.
pub fn replay(schedule: &TrainSchedule, val_losses: &[f64]) -> (Vec<usize>, Option<usize>) {
    let mut ctl = PlateauController::new(schedule);
    let mut drops = Vec::new();
    for (i, &v) in val_losses.iter().enumerate() {
        match ctl.observe(v) {
            PlateauEvent::LrReduced => drops.push(i + 1),
            PlateauEvent::Stop => return (drops, Some(i + 1)),
            _ => {}
        }
    }
    (drops, None)
}
