//! Optimization loop: step learning-rate schedule, Adam, the data-parallel
//! training step and the epoch loop with validation and checkpoints.

mod optimizer;
mod run;
mod step;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use optimizer::AdamState;
pub use run::{evaluate_scans, load_labeled, run_training, EpochMetrics, LabeledScan, RunOptions, TrainOutcome, METRICS_HEADER};
pub use step::{train_step, StepReport, StepSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Fractions of `epochs` at which the rate is divided by `lr_drop_factor`.
    pub lr_drop_points: Vec<f64>,
    pub lr_drop_factor: f64,
    pub optimizer: Optimizer,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    /// Apply weight decay directly to the weights instead of through the gradient.
    pub decoupled_weight_decay: bool,
    pub seed: u64,
    /// Logical data-parallel workers `W`.
    pub workers: usize,
    /// Scans per worker per step.
    pub local_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            base_lr: 1e-4,
            weight_decay: 1e-5,
            lr_drop_points: vec![0.3, 0.8],
            lr_drop_factor: 10.0,
            optimizer: Optimizer::Adam,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            decoupled_weight_decay: false,
            seed: 0,
            workers: 1,
            local_batch: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 || self.workers == 0 || self.local_batch == 0 {
            return bad("training.epochs, training.workers and training.local_batch must be >= 1".into());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("training.base_lr and training.weight_decay must be finite and nonnegative".into());
        }
        if self.lr_drop_points.iter().any(|p| !(*p > 0.0 && *p < 1.0))
            || self.lr_drop_points.windows(2).any(|w| w[0] > w[1])
        {
            return bad(format!("training.lr_drop_points {:?} must be sorted within (0, 1)", self.lr_drop_points));
        }
        if !(self.lr_drop_factor >= 1.0) {
            return bad("training.lr_drop_factor must be >= 1".into());
        }
        let [b1, b2] = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.adam_eps > 0.0) {
            return bad("training.adam_betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        Ok(())
    }

    /// Epoch index at which each drop takes effect: `floor(f * epochs)`.
    pub fn drop_epochs(&self) -> Vec<usize> {
        self.lr_drop_points.iter().map(|f| (f * self.epochs as f64 + 1e-9).floor() as usize).collect()
    }
}

/// Piecewise-constant step schedule.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside [0, {})", cfg.epochs)));
    }
    let drops = cfg.drop_epochs().into_iter().filter(|&e| epoch >= e).count();
    Ok(cfg.base_lr / cfg.lr_drop_factor.powi(drops as i32))
}
