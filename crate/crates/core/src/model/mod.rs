//! Volume encoder (hybrid conv-transformer or residual CNN), projection
//! head, classifier, 2D-to-3D weight inflation and checkpoint I/O.

mod checkpoint;
mod encoder;
mod inflate;
mod mapping;
mod params;
mod pretrained;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMetadata};
pub use encoder::{volumes_to_tensor, ForwardOutput, Model};
pub use inflate::{inflate_2d_weights, InflateMode};
pub use mapping::{MappingRule, MappingSpec};
pub use params::{ParamKind, ParamSpec, ParamStore};
pub use pretrained::{apply_pretrained, load_pretrained, LoadOptions, LoadReport};

/// Epsilon guarding the projection normalization against zero rows.
pub const PROJECTION_EPS: f64 = 1e-12;
/// Epsilon of every channel layer norm.
pub const NORM_EPS: f64 = 1e-5;
/// Voxels in `[0, 1]` enter the encoder as `(v - INPUT_MEAN) / INPUT_STD`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    HybridTransformer,
    ResidualCnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub stage_depths: Vec<usize>,
    pub channels: Vec<usize>,
    pub attention_heads: usize,
    /// Zero-based index of the first stage using global attention.
    pub global_stage_start: usize,
    pub ffn_ratio: usize,
    /// Kernel of the depthwise local relation aggregator.
    pub local_kernel: usize,
    pub stem_kernel: [usize; 3],
    pub stem_stride: [usize; 3],
    /// Projection dimension `d_p`.
    pub projection_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::HybridTransformer,
            stage_depths: vec![2, 2, 4, 2],
            channels: vec![32, 64, 128, 256],
            attention_heads: 4,
            global_stage_start: 2,
            ffn_ratio: 4,
            local_kernel: 5,
            stem_kernel: [3, 4, 4],
            stem_stride: [2, 4, 4],
            projection_dim: 128,
        }
    }
}

impl ModelConfig {
    /// Encoder feature dimension `d_e`, the last stage width.
    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.stage_depths.is_empty() || self.stage_depths.len() != self.channels.len() {
            return bad(format!(
                "model.stage_depths ({}) and model.channels ({}) must be non-empty and equally long",
                self.stage_depths.len(),
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) || self.projection_dim == 0 || self.ffn_ratio == 0 {
            return bad("model widths must be positive".into());
        }
        if self.local_kernel % 2 == 0 {
            return bad(format!("model.local_kernel must be odd, got {}", self.local_kernel));
        }
        if self.stem_kernel.contains(&0) || self.stem_stride.contains(&0) {
            return bad("model.stem_kernel and model.stem_stride must be positive".into());
        }
        for d in 0..3 {
            let (k, st) = (self.stem_kernel[d], self.stem_stride[d]);
            let twice_pad = 2 * ((k + 1).saturating_sub(st) / 2);
            if twice_pad + st < k || twice_pad >= k {
                return bad(format!("model.stem_kernel {k} cannot downsample exactly by stride {st}"));
            }
        }
        if self.backbone == Backbone::HybridTransformer {
            for (s, &c) in self.channels.iter().enumerate().skip(self.global_stage_start) {
                if self.attention_heads == 0 || c % self.attention_heads != 0 {
                    return bad(format!(
                        "model.attention_heads {} does not divide stage {s} channels {c}",
                        self.attention_heads
                    ));
                }
            }
        }
        Ok(())
    }

    /// Factor each spatial axis must be divisible by.
    pub fn required_divisor(&self) -> [usize; 3] {
        let later = 1 << (self.channels.len() - 1);
        [self.stem_stride[0], self.stem_stride[1] * later, self.stem_stride[2] * later]
    }

    pub fn check_input(&self, shape: [usize; 3]) -> Result<()> {
        let div = self.required_divisor();
        if shape.iter().zip(&div).any(|(&s, &d)| s == 0 || s % d != 0) {
            return Err(Error::invalid(format!(
                "input shape {shape:?} must be divisible by {div:?} (T, H, W)"
            )));
        }
        Ok(())
    }
}
