//! Hybrid mixup/cutmix synthesis and the gather-and-dispatch protocol that
//! lets logical data-parallel workers mix across their combined batch.

mod apply;
mod decision;
mod dispatch;
mod wire;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use apply::{apply_cutmix, apply_mix, apply_mixup};
pub use decision::{derangement, sample_decision, sample_mix_decision, CutBox, MixDecision, MixStrategy, SeedTuple};
pub use dispatch::{gather_dispatch, Transport, WorkerBatch};
pub use wire::{decode_worker_message, encode_worker_message, WorkerMessage};

/// Which strategies a run may draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// Mixup or cutmix with equal probability each step.
    Hybrid,
    Mixup,
    Cutmix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub mode: MixMode,
    /// Beta(alpha, alpha) parameter for lambda.
    pub alpha: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self { mode: MixMode::Hybrid, alpha: 0.2 }
    }
}

/// One volume with a label distribution over the two classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub voxels: Array3<f32>,
    pub label: [f64; 2],
}

impl Sample {
    pub fn one_hot(voxels: Array3<f32>, class: usize) -> Self {
        let mut label = [0.0; 2];
        label[class] = 1.0;
        Self { voxels, label }
    }
}

/// Raw samples and their mixed counterparts, position for position.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub raw: Vec<Sample>,
    pub mixed: Vec<Sample>,
}
