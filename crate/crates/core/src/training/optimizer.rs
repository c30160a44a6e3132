use std::collections::BTreeMap;

use cmc_autograd::Tensor;

use super::TrainConfig;
use crate::model::ParamStore;

/// Adam moments keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// One update. Coupled decay adds `wd * theta` to the gradient;
    /// decoupled decay subtracts `lr * wd * theta` from the weight.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[(String, Tensor)], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let [b1, b2] = cfg.adam_betas;
        let (c1, c2) = (1.0 - b1.powi(self.step as i32), 1.0 - b2.powi(self.step as i32));
        let wd = cfg.weight_decay;
        for (name, grad) in grads {
            let theta = params.tensors.get_mut(name).expect("gradient for unknown parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(theta.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(theta.shape()));
            let (th, g) = (theta.data_mut(), grad.data());
            for i in 0..th.len() {
                let gi = if cfg.decoupled_weight_decay { g[i] } else { g[i] + wd * th[i] };
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = (mi / c1) / ((vi / c2).sqrt() + cfg.adam_eps);
                if cfg.decoupled_weight_decay {
                    th[i] -= lr * wd * th[i];
                }
                th[i] -= lr * update;
            }
        }
    }

    /// Moments as checkpoint tensors under `optim.m.` / `optim.v.`.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let m = self.m.iter().map(|(k, t)| (format!("optim.m.{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("optim.v.{k}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn from_tensors(step: u64, tensors: &BTreeMap<String, Tensor>) -> Self {
        let pick = |prefix: &str| {
            tensors
                .iter()
                .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
                .collect()
        };
        Self { step, m: pick("optim.m."), v: pick("optim.v.") }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut params = ParamStore::default();
        params.tensors.insert("w".into(), Tensor::new(&[2], vec![1.0, -1.0]));
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let mut adam = AdamState::default();
        adam.update(&mut params, &[("w".into(), Tensor::new(&[2], vec![0.5, -2.0]))], 0.1, &cfg);
        let w = params.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let mut params = ParamStore::default();
        params.tensors.insert("w".into(), Tensor::new(&[1], vec![0.3]));
        for decoupled in [false, true] {
            let cfg = TrainConfig { decoupled_weight_decay: decoupled, weight_decay: 0.1, ..TrainConfig::default() };
            let before = params.clone();
            AdamState::default().update(&mut params, &[("w".into(), Tensor::new(&[1], vec![4.0]))], 0.0, &cfg);
            assert_eq!(params, before);
        }
    }
}
