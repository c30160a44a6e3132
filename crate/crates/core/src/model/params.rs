use std::collections::BTreeMap;

use cmc_autograd::Tensor;
use rand::Rng;

use super::{Backbone, ModelConfig};
use crate::seeding::{rng_for, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Uniform with variance `1 / fan_in`.
    Weight { fan_in: usize },
    /// Uniform on `±1 / sqrt(fan_in)`. Convolutions feed channel norms, and
    /// a zero bias would put every zero-valued input patch at the norm's
    /// zero-variance singularity.
    Bias { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Named parameter tensors in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Each tensor draws from its own stream keyed by its name, so adding or
/// removing a parameter never shifts another's initial value.
pub(crate) fn initialize(specs: &[ParamSpec], seed: u64) -> ParamStore {
    let tensors = specs
        .iter()
        .map(|s| {
            let numel = s.shape.iter().product();
            let data = match s.kind {
                ParamKind::Zeros => vec![0.0; numel],
                ParamKind::Ones => vec![1.0; numel],
                ParamKind::Weight { fan_in } | ParamKind::Bias { fan_in } => {
                    let scale = if matches!(s.kind, ParamKind::Weight { .. }) { 3.0 } else { 1.0 };
                    let bound = (scale / fan_in.max(1) as f64).sqrt();
                    let mut rng = rng_for(Stream::Init, &[seed, fnv1a(&s.name)]);
                    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            (s.name.clone(), Tensor::new(&s.shape, data))
        })
        .collect();
    ParamStore { tensors }
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) {
        self.0.push(ParamSpec { name, shape, kind });
    }

    fn conv(&mut self, prefix: &str, cout: usize, cin_per_group: usize, k: [usize; 3], bias: bool) {
        let fan_in = cin_per_group * k.iter().product::<usize>();
        self.push(format!("{prefix}.weight"), vec![cout, cin_per_group, k[0], k[1], k[2]], ParamKind::Weight { fan_in });
        if bias {
            self.push(format!("{prefix}.bias"), vec![cout], ParamKind::Bias { fan_in });
        }
    }

    fn linear(&mut self, prefix: &str, out: usize, inp: usize) {
        self.push(format!("{prefix}.weight"), vec![out, inp], ParamKind::Weight { fan_in: inp });
        self.push(format!("{prefix}.bias"), vec![out], ParamKind::Zeros);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gamma"), vec![c], ParamKind::Ones);
        self.push(format!("{prefix}.beta"), vec![c], ParamKind::Zeros);
    }
}

pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs(Vec::new());
    let c0 = cfg.channels[0];
    s.conv("stem.conv", c0, 1, cfg.stem_kernel, true);
    for (stage, (&depth, &c)) in cfg.stage_depths.iter().zip(&cfg.channels).enumerate() {
        if stage > 0 {
            s.conv(&format!("stages.{stage}.down.conv"), c, cfg.channels[stage - 1], [1, 2, 2], true);
            s.norm(&format!("stages.{stage}.down.norm"), c);
        }
        for b in 0..depth {
            let p = format!("stages.{stage}.blocks.{b}");
            match cfg.backbone {
                Backbone::HybridTransformer => {
                    let hidden = c * cfg.ffn_ratio;
                    s.conv(&format!("{p}.dpe"), c, 1, [3; 3], true);
                    s.norm(&format!("{p}.norm1"), c);
                    if stage >= cfg.global_stage_start {
                        s.conv(&format!("{p}.attn.qkv"), 3 * c, c, [1; 3], true);
                        s.conv(&format!("{p}.attn.proj"), c, c, [1; 3], true);
                    } else {
                        let k = cfg.local_kernel;
                        s.conv(&format!("{p}.local.pw1"), c, c, [1; 3], true);
                        s.conv(&format!("{p}.local.dw"), c, 1, [k; 3], true);
                        s.conv(&format!("{p}.local.pw2"), c, c, [1; 3], true);
                    }
                    s.norm(&format!("{p}.norm2"), c);
                    s.conv(&format!("{p}.ffn.fc1"), hidden, c, [1; 3], true);
                    s.conv(&format!("{p}.ffn.fc2"), c, hidden, [1; 3], true);
                }
                Backbone::ResidualCnn => {
                    s.conv(&format!("{p}.conv1"), c, c, [3; 3], false);
                    s.norm(&format!("{p}.norm1"), c);
                    s.conv(&format!("{p}.conv2"), c, c, [3; 3], false);
                    s.norm(&format!("{p}.norm2"), c);
                }
            }
        }
    }
    let d_e = cfg.feature_dim();
    if cfg.backbone == Backbone::HybridTransformer {
        s.norm("norm", d_e);
    }
    s.linear("head.fc1", d_e, d_e);
    s.linear("head.fc2", cfg.projection_dim, d_e);
    // Zero-initialised: softmax cross-entropy gradients of the two rows are
    // exact negatives, so `w_1 = -w_0` holds throughout training and the
    // class-1 activation map is the class-discriminative one.
    s.push("classifier.weight".into(), vec![crate::volume::NUM_CLASSES, d_e], ParamKind::Zeros);
    s.push("classifier.bias".into(), vec![crate::volume::NUM_CLASSES], ParamKind::Zeros);
    s.0
}
