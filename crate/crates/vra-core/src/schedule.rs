//! Validation-loss bookkeeping: reduce-on-plateau learning-rate scheduling
//! and early stopping. Both use the same relative improvement rule:
//! a loss improves on the best seen so far when it is below
//! `best * (1 - threshold)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VraError};

pub const DEFAULT_IMPROVEMENT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            factor: 0.5,
            patience: 3,
            threshold: DEFAULT_IMPROVEMENT_THRESHOLD,
            min_lr: 1e-8,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(VraError::InvalidConfig(format!(
                "scheduler factor {} outside (0, 1)",
                self.factor
            )));
        }
        if self.patience == 0 {
            return Err(VraError::InvalidConfig("scheduler patience must be >= 1".into()));
        }
        if !(self.threshold >= 0.0 && self.threshold < 1.0) {
            return Err(VraError::InvalidConfig(format!(
                "scheduler threshold {}",
                self.threshold
            )));
        }
        if !(self.min_lr > 0.0 && self.min_lr.is_finite()) {
            return Err(VraError::InvalidConfig(format!(
                "scheduler min_lr {}",
                self.min_lr
            )));
        }
        Ok(())
    }
}

fn improved(val_loss: f64, best: f64, threshold: f64) -> bool {
    val_loss < best * (1.0 - threshold)
}

/// Reduce-on-plateau: after `patience` consecutive non-improving epochs the
/// learning rate is multiplied by `factor` (floored at `min_lr`) and the
/// patience counter resets. The best-loss watermark is never reset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    cfg: SchedulerConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: SchedulerConfig, initial_lr: f64) -> Result<PlateauScheduler> {
        cfg.validate()?;
        if !(initial_lr > 0.0 && initial_lr.is_finite()) {
            return Err(VraError::InvalidConfig(format!(
                "initial learning rate {initial_lr}"
            )));
        }
        Ok(PlateauScheduler {
            cfg,
            lr: initial_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's validation loss; returns the learning rate to use
    /// from the next epoch on.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        if improved(val_loss, self.best, self.cfg.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Early stopping on the same relative-improvement rule: stop once the
/// validation loss has failed to improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, threshold: f64) -> Result<EarlyStopper> {
        if patience == 0 {
            return Err(VraError::InvalidConfig(
                "early-stop patience must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&threshold) {
            return Err(VraError::InvalidConfig(format!(
                "early-stop threshold {threshold}"
            )));
        }
        Ok(EarlyStopper {
            patience,
            threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    pub fn update(&mut self, val_loss: f64) -> Decision {
        if improved(val_loss, self.best, self.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
            Decision::Continue
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                Decision::Stop
            } else {
                Decision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}
