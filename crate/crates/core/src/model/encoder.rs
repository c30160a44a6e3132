use cmc_autograd::{Conv3dSpec, Graph, Tensor, Var};
use ndarray::Array3;

use super::params::{initialize, param_specs};
use super::{Backbone, ModelConfig, ParamStore, INPUT_MEAN, INPUT_STD, NORM_EPS, PROJECTION_EPS};
use crate::error::{Error, Result};

/// Encoder, projection head and classifier with their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Final-stage feature grid before pooling, `[B, d_e, t, h, w]`.
    pub grid: Var,
    /// Pooled features `r`, `[B, d_e]`.
    pub features: Var,
    /// Unit-norm projections `z`, `[B, d_p]`.
    pub z: Var,
    /// Class logits, `[B, 2]`.
    pub logits: Var,
}

/// Stack equally shaped volumes into a `[B, 1, T, H, W]` tensor.
pub fn volumes_to_tensor<'a>(volumes: impl IntoIterator<Item = &'a Array3<f32>>) -> Result<Tensor> {
    let mut shape = None;
    let mut data = Vec::new();
    let mut batch = 0;
    for v in volumes {
        let dim = v.dim();
        if *shape.get_or_insert(dim) != dim {
            return Err(Error::invalid(format!("volume shape {dim:?} differs from {:?}", shape.unwrap())));
        }
        data.extend(v.iter().map(|&x| x as f64));
        batch += 1;
    }
    let (t, h, w) = shape.ok_or_else(|| Error::invalid("empty volume batch"))?;
    Ok(Tensor::new(&[batch, 1, t, h, w], data))
}

struct Ctx<'a> {
    g: &'a mut Graph,
    params: &'a ParamStore,
    train: bool,
}

impl Ctx<'_> {
    fn p(&mut self, name: &str) -> Var {
        let t = self.params.get(name).unwrap_or_else(|| panic!("parameter {name} missing from store"));
        if self.train {
            self.g.param(name, t)
        } else {
            self.g.constant(t.clone())
        }
    }

    fn conv(&mut self, prefix: &str, x: Var, spec: Conv3dSpec) -> Var {
        let w = self.p(&format!("{prefix}.weight"));
        let bias_name = format!("{prefix}.bias");
        let b = self.params.get(&bias_name).is_some().then(|| self.p(&bias_name));
        self.g.conv3d(x, w, b, spec)
    }

    fn pointwise(&mut self, prefix: &str, x: Var) -> Var {
        self.conv(prefix, x, Conv3dSpec::default())
    }

    fn norm(&mut self, prefix: &str, x: Var) -> Var {
        let gamma = self.p(&format!("{prefix}.gamma"));
        let beta = self.p(&format!("{prefix}.beta"));
        self.g.channel_norm(x, gamma, beta, NORM_EPS)
    }

    fn linear(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.p(&format!("{prefix}.weight"));
        let b = self.p(&format!("{prefix}.bias"));
        self.g.linear(x, w, Some(b))
    }
}

impl Model {
    /// Freshly initialized model; a pure function of `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = initialize(&param_specs(&config), seed);
        Ok(Self { config, params })
    }

    pub fn param_specs(&self) -> Vec<super::ParamSpec> {
        param_specs(&self.config)
    }

    /// Full forward pass on `x: [B, 1, T, H, W]`. With `train`, parameters
    /// are registered as named graph leaves so gradients can be taken.
    pub fn forward(&self, g: &mut Graph, x: Var, train: bool) -> Result<ForwardOutput> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 5 || shape[1] != 1 {
            return Err(Error::invalid(format!("model input must be [B, 1, T, H, W], got {shape:?}")));
        }
        self.config.check_input([shape[2], shape[3], shape[4]])?;
        let mut ctx = Ctx { g, params: &self.params, train };
        let grid = self.encode_grid(&mut ctx, x);
        let features = ctx.g.global_avg_pool(grid);
        let h = ctx.linear("head.fc1", features);
        let h = ctx.g.relu(h);
        let h = ctx.linear("head.fc2", h);
        let z = ctx.g.l2_normalize_rows(h, PROJECTION_EPS);
        let logits = ctx.linear("classifier", features);
        Ok(ForwardOutput { grid, features, z, logits })
    }

    fn encode_grid(&self, ctx: &mut Ctx, x: Var) -> Var {
        let cfg = &self.config;
        let shift = ctx.g.constant(Tensor::full(ctx.g.shape(x), -INPUT_MEAN / INPUT_STD));
        let x = ctx.g.scale(x, 1.0 / INPUT_STD);
        let x = ctx.g.add(x, shift);
        let stem = Conv3dSpec::default().with_stride(cfg.stem_stride).with_padding(stem_padding(cfg));
        // No norm here: a channel norm of a single-channel linear map discards
        // absolute intensity, which is the main cue in CT.
        let mut x = ctx.conv("stem.conv", x, stem);
        if cfg.backbone == Backbone::ResidualCnn {
            x = ctx.g.relu(x);
        }
        for (stage, &depth) in cfg.stage_depths.iter().enumerate() {
            if stage > 0 {
                let down = Conv3dSpec::default().with_stride([1, 2, 2]);
                x = ctx.conv(&format!("stages.{stage}.down.conv"), x, down);
                x = ctx.norm(&format!("stages.{stage}.down.norm"), x);
            }
            for block in 0..depth {
                x = match cfg.backbone {
                    Backbone::HybridTransformer => self.hybrid_block_in(ctx, x, stage, block),
                    Backbone::ResidualCnn => Self::basic_block(ctx, x, stage, block),
                };
            }
        }
        if cfg.backbone == Backbone::HybridTransformer {
            x = ctx.norm("norm", x);
        }
        x
    }

    /// One hybrid block at `(stage, block)` applied to `x: [B, C, T, H, W]`:
    /// positional depthwise conv, local or global relation aggregation and
    /// feed-forward, each as a residual branch.
    pub fn hybrid_block(&self, g: &mut Graph, x: Var, stage: usize, block: usize, train: bool) -> Var {
        let mut ctx = Ctx { g, params: &self.params, train };
        self.hybrid_block_in(&mut ctx, x, stage, block)
    }

    fn hybrid_block_in(&self, ctx: &mut Ctx, x: Var, stage: usize, block: usize) -> Var {
        let cfg = &self.config;
        let p = format!("stages.{stage}.blocks.{block}");
        let c = cfg.channels[stage];
        let dims = ctx.g.shape(x).to_vec();

        let pos = ctx.conv(&format!("{p}.dpe"), x, Conv3dSpec::same([3; 3]).with_groups(c));
        let x = ctx.g.add(x, pos);

        let h = ctx.norm(&format!("{p}.norm1"), x);
        let h = if stage >= cfg.global_stage_start {
            let qkv = ctx.pointwise(&format!("{p}.attn.qkv"), h);
            let tokens = dims[2] * dims[3] * dims[4];
            let qkv = ctx.g.reshape(qkv, &[dims[0], 3 * c, tokens]);
            let a = ctx.g.multi_head_attention(qkv, cfg.attention_heads);
            let a = ctx.g.reshape(a, &dims);
            ctx.pointwise(&format!("{p}.attn.proj"), a)
        } else {
            let k = cfg.local_kernel;
            let h = ctx.pointwise(&format!("{p}.local.pw1"), h);
            let h = ctx.conv(&format!("{p}.local.dw"), h, Conv3dSpec::same([k; 3]).with_groups(c));
            ctx.pointwise(&format!("{p}.local.pw2"), h)
        };
        let x = ctx.g.add(x, h);

        let h = ctx.norm(&format!("{p}.norm2"), x);
        let h = ctx.pointwise(&format!("{p}.ffn.fc1"), h);
        let h = ctx.g.gelu(h);
        let h = ctx.pointwise(&format!("{p}.ffn.fc2"), h);
        ctx.g.add(x, h)
    }

    fn basic_block(ctx: &mut Ctx, x: Var, stage: usize, block: usize) -> Var {
        let p = format!("stages.{stage}.blocks.{block}");
        let h = ctx.conv(&format!("{p}.conv1"), x, Conv3dSpec::same([3; 3]));
        let h = ctx.norm(&format!("{p}.norm1"), h);
        let h = ctx.g.relu(h);
        let h = ctx.conv(&format!("{p}.conv2"), h, Conv3dSpec::same([3; 3]));
        let h = ctx.norm(&format!("{p}.norm2"), h);
        let sum = ctx.g.add(x, h);
        ctx.g.relu(sum)
    }

    /// Pooled features `r` for a batch of volumes.
    pub fn encode(&self, volumes: &[Array3<f32>]) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(volumes_to_tensor(volumes)?);
        let out = self.forward(&mut g, x, false)?;
        Ok(g.value(out.features).clone())
    }

    /// Unit-norm projections of pooled features `r: [B, d_e]`.
    pub fn project(&self, r: &Tensor) -> Result<Tensor> {
        if r.ndim() != 2 || r.shape()[1] != self.config.feature_dim() {
            return Err(Error::invalid(format!(
                "features must be [B, {}], got {:?}",
                self.config.feature_dim(),
                r.shape()
            )));
        }
        let mut g = Graph::new();
        let mut ctx = Ctx { g: &mut g, params: &self.params, train: false };
        let x = ctx.g.constant(r.clone());
        let h = ctx.linear("head.fc1", x);
        let h = ctx.g.relu(h);
        let h = ctx.linear("head.fc2", h);
        let z = g.l2_normalize_rows(h, PROJECTION_EPS);
        Ok(g.value(z).clone())
    }

    /// Softmax class probabilities for a batch of volumes.
    pub fn predict_proba(&self, volumes: &[Array3<f32>]) -> Result<Vec<[f64; 2]>> {
        let mut g = Graph::new();
        let x = g.constant(volumes_to_tensor(volumes)?);
        let out = self.forward(&mut g, x, false)?;
        Ok(softmax_rows(g.value(out.logits)))
    }
}

/// Padding that makes the stem output exactly `input / stride` per axis.
fn stem_padding(cfg: &ModelConfig) -> [usize; 3] {
    let mut pad = [0; 3];
    for d in 0..3 {
        pad[d] = (cfg.stem_kernel[d] + 1).saturating_sub(cfg.stem_stride[d]) / 2;
    }
    pad
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Vec<[f64; 2]> {
    (0..logits.shape()[0])
        .map(|i| {
            let r = logits.row(i);
            let m = r[0].max(r[1]);
            let (a, b) = ((r[0] - m).exp(), (r[1] - m).exp());
            [a / (a + b), b / (a + b)]
        })
        .collect()
}

impl Model {
    /// Checkpoint holding the parameters, with the model config stored
    /// under `extra.model`.
    pub fn to_checkpoint(&self, config_hash: &str, epoch: u64, mut extra: serde_json::Value) -> super::Checkpoint {
        if !extra.is_object() {
            extra = serde_json::json!({});
        }
        extra["model"] = serde_json::to_value(&self.config).expect("model config serializes");
        super::Checkpoint {
            metadata: super::CheckpointMetadata { config_hash: config_hash.to_string(), epoch, extra },
            tensors: self.params.tensors.clone(),
        }
    }

    /// Rebuild a model saved by [`Model::to_checkpoint`]; every parameter
    /// must be present with its configured shape.
    pub fn from_checkpoint(ckpt: &super::Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ckpt.metadata.extra["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("checkpoint lacks a usable model config: {e}")))?;
        let mut model = Model::new(config, 0)?;
        let opts = super::LoadOptions { strict: false, ..Default::default() };
        let report = super::apply_pretrained(&mut model, ckpt, &super::MappingSpec::default(), opts)?;
        if !report.missing.is_empty() || !report.inflated.is_empty() {
            return Err(Error::Checkpoint(format!("checkpoint is missing tensors: {}", report.missing.join(", "))));
        }
        Ok(model)
    }
}
