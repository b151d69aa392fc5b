use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which validation loss a new epoch is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReference {
    /// Best loss seen so far.
    #[default]
    Best,
    /// Loss of the previous epoch.
    Previous,
}

/// What an epoch-end update did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurriculumAction {
    Shrink,
    DecayLr,
    Hold,
}

impl CurriculumAction {
    pub fn label(self) -> &'static str {
        match self {
            CurriculumAction::Shrink => "shrink",
            CurriculumAction::DecayLr => "decay_lr",
            CurriculumAction::Hold => "hold",
        }
    }
}

/// Bottleneck and learning-rate schedule: shrink the bottleneck the first
/// time validation loss fails to improve, decay the learning rate the second
/// time, and reset on improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    pub bottleneck: usize,
    pub lr: f64,
    /// Reference loss; infinite before the first epoch.
    pub reference_loss: f64,
    /// Set when the bottleneck was cut at the current learning rate.
    pub flag: bool,
    pub step_size: usize,
    pub lr_decay: f64,
    pub c_max: usize,
    pub c_min: usize,
    pub max_epochs: usize,
    pub reference: LossReference,
}

/// Default bottleneck decrement: `ceil(c_max / 8)`.
pub fn default_step_size(c_max: usize) -> usize {
    c_max.div_ceil(8).max(1)
}

impl CurriculumState {
    pub fn new(
        c_max: usize,
        c_min: usize,
        step_size: usize,
        lr_decay: f64,
        lr: f64,
        max_epochs: usize,
        reference: LossReference,
    ) -> Result<Self> {
        if c_min < 1 || c_min > c_max {
            return Err(Error::Parameter(format!("need 1 <= c_min ({c_min}) <= c_max ({c_max})")));
        }
        if step_size < 1 {
            return Err(Error::Parameter("bottleneck step must be at least 1".into()));
        }
        if !(lr_decay > 0.0 && lr_decay < 1.0) {
            return Err(Error::Parameter(format!("lr decay {lr_decay} outside (0, 1)")));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {lr} must be positive")));
        }
        Ok(Self {
            bottleneck: c_max,
            lr,
            reference_loss: f64::INFINITY,
            flag: false,
            step_size,
            lr_decay,
            c_max,
            c_min,
            max_epochs,
            reference,
        })
    }

    /// Epoch-end update with the new validation loss.
    pub fn step(&mut self, val_loss: f64) -> CurriculumAction {
        let worse = val_loss > self.reference_loss;
        let action = if worse {
            if !self.flag {
                let before = self.bottleneck;
                self.bottleneck = self.bottleneck.saturating_sub(self.step_size).max(self.c_min);
                self.flag = true;
                if self.bottleneck < before {
                    CurriculumAction::Shrink
                } else {
                    CurriculumAction::Hold
                }
            } else {
                self.lr *= self.lr_decay;
                self.flag = false;
                CurriculumAction::DecayLr
            }
        } else {
            // already clear on most paths; reset anyway
            self.flag = false;
            CurriculumAction::Hold
        };
        self.reference_loss = match self.reference {
            LossReference::Best => self.reference_loss.min(val_loss),
            LossReference::Previous => val_loss,
        };
        action
    }
}
