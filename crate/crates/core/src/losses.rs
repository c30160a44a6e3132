//! Joint objective: supervised contrastive loss over projections, soft
//! cross-entropy on mixed samples and cross-entropy on raw samples. Every
//! loss returns its analytic gradient alongside its value.

use cmc_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::NUM_CLASSES;

const UNIT_NORM_TOL: f64 = 1e-6;
const SIMPLEX_TOL: f64 = 1e-6;

/// Denominator of the per-anchor positive average, `2 N_y - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveNormalization {
    /// `N_y` counts source scans of class `y`, so the denominator equals
    /// the number of positives when both views of every scan are present.
    ViewPairs,
    /// `N_y` counts rows of class `y` in the view batch.
    BatchCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub positive_normalization: PositiveNormalization,
    pub w_con: f64,
    pub w_mix: f64,
    pub w_clf: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, positive_normalization: PositiveNormalization::ViewPairs, w_con: 1.0, w_mix: 1.0, w_clf: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("loss.tau must be positive, got {}", self.tau)));
        }
        if [self.w_con, self.w_mix, self.w_clf].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-anchor losses and the gradient of their sum with respect to `z`.
#[derive(Clone, Debug)]
pub struct SupConOutput {
    pub per_sample: Vec<f64>,
    pub grad: Tensor,
}

fn check_projections(z: &Tensor, labels: &[usize], tau: f64) -> Result<(usize, usize)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if z.ndim() != 2 {
        return Err(Error::invalid(format!("projections must be 2-D, got shape {:?}", z.shape())));
    }
    let (n, d) = (z.shape()[0], z.shape()[1]);
    if n < 2 || labels.len() != n {
        return Err(Error::invalid(format!("need >= 2 rows with one label each, got {n} rows and {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    for i in 0..n {
        let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::invalid(format!("projection row {i} has norm {norm}, expected 1")));
        }
    }
    Ok((n, d))
}

/// Supervised contrastive loss per anchor `i`:
/// `-(1/(2N_y - 1)) sum_{j in P(i)} log(exp(s_ij) / sum_{k != i} exp(s_ik))`
/// with `s_ij = z_i . z_j / tau`; anchors without positives contribute 0.
pub fn supcon_loss(z: &Tensor, labels: &[usize], tau: f64, norm: PositiveNormalization) -> Result<SupConOutput> {
    let (n, d) = check_projections(z, labels, tau)?;
    let mut counts = [0usize; NUM_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    let sim: Vec<f64> = (0..n * n)
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum::<f64>() / tau
        })
        .collect();

    let mut per_sample = vec![0.0; n];
    // dL/ds_ij accumulated for every ordered pair
    let mut ds = vec![0.0; n * n];
    for i in 0..n {
        let positives = counts[labels[i]] - 1;
        if positives == 0 {
            continue;
        }
        let denom = match norm {
            PositiveNormalization::ViewPairs => positives as f64,
            PositiveNormalization::BatchCount => (2 * counts[labels[i]] - 1) as f64,
        };
        let row = &sim[i * n..(i + 1) * n];
        let max = (0..n).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = (0..n).filter(|&k| k != i).map(|k| (row[k] - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let mut loss = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let softmax = (row[j] - lse).exp();
            let positive = labels[j] == labels[i];
            if positive {
                loss -= row[j] - lse;
            }
            ds[i * n + j] = (positives as f64 * softmax - if positive { 1.0 } else { 0.0 }) / denom;
        }
        per_sample[i] = loss / denom;
    }

    let mut grad = Tensor::zeros(&[n, d]);
    for i in 0..n {
        for j in 0..n {
            let g = ds[i * n + j] / tau;
            if g == 0.0 {
                continue;
            }
            let (zi, zj) = (z.row(i).to_vec(), z.row(j).to_vec());
            for (gi, v) in grad.row_mut(i).iter_mut().zip(&zj) {
                *gi += g * v;
            }
            for (gj, v) in grad.row_mut(j).iter_mut().zip(&zi) {
                *gj += g * v;
            }
        }
    }
    Ok(SupConOutput { per_sample, grad })
}

fn check_simplex(label: &[f64]) -> Result<()> {
    let sum: f64 = label.iter().sum();
    if label.iter().any(|&p| !(p >= -SIMPLEX_TOL)) || !((sum - 1.0).abs() <= SIMPLEX_TOL) {
        return Err(Error::invalid(format!("soft label {label:?} is not on the simplex")));
    }
    Ok(())
}

/// `-sum_c y_c log softmax(logits)_c` and its gradient with respect to the logits.
pub fn soft_cross_entropy(logits: &[f64], soft_label: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != soft_label.len() || logits.is_empty() {
        return Err(Error::invalid("logits and soft label lengths differ"));
    }
    check_simplex(soft_label)?;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mass: f64 = soft_label.iter().sum();
    let loss = logits.iter().zip(soft_label).map(|(l, y)| -y * (l - lse)).sum::<f64>();
    let grad = logits.iter().zip(soft_label).map(|(l, y)| mass * (l - lse).exp() - y).collect();
    Ok((loss.max(0.0), grad))
}

/// Network outputs for the raw views of one (possibly gathered) batch.
#[derive(Clone, Debug)]
pub struct BatchEmbedding {
    /// `[2N, d_p]`, unit rows.
    pub z: Tensor,
    /// `[2N, 2]`.
    pub logits: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub con: f64,
    pub mix: f64,
    pub clf: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_con: f64,
    pub l_mix: f64,
    pub l_clf: f64,
    /// `(1/2N) sum_i (w_con con_i + w_mix mix_i + w_clf clf_i)`.
    pub l_total: f64,
    pub per_sample: Vec<SampleLoss>,
}

/// Gradients of `l_total` with respect to each network output.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub z: Tensor,
    pub logits_raw: Tensor,
    pub logits_mixed: Tensor,
}

/// Combined objective; the contrastive term sees raw rows only.
pub fn total_loss(
    raw: &BatchEmbedding,
    mixed_logits: &Tensor,
    soft_labels: &[[f64; 2]],
    cfg: &LossConfig,
) -> Result<(LossReport, LossGradients)> {
    let n = raw.labels.len();
    if raw.logits.shape() != [n, NUM_CLASSES] || mixed_logits.shape() != [n, NUM_CLASSES] || soft_labels.len() != n {
        return Err(Error::invalid(format!(
            "raw ({:?}) and mixed ({:?}, {} labels) rows must match {n} raw labels",
            raw.logits.shape(),
            mixed_logits.shape(),
            soft_labels.len()
        )));
    }
    let con = supcon_loss(&raw.z, &raw.labels, cfg.tau, cfg.positive_normalization)?;
    let inv = 1.0 / n as f64;
    let mut grads = LossGradients {
        z: con.grad,
        logits_raw: Tensor::zeros(&[n, NUM_CLASSES]),
        logits_mixed: Tensor::zeros(&[n, NUM_CLASSES]),
    };
    grads.z.scale(cfg.w_con * inv);

    let mut per_sample = Vec::with_capacity(n);
    for i in 0..n {
        let mut one_hot = [0.0; NUM_CLASSES];
        one_hot[raw.labels[i]] = 1.0;
        let (clf, g_clf) = soft_cross_entropy(raw.logits.row(i), &one_hot)?;
        let (mix, g_mix) = soft_cross_entropy(mixed_logits.row(i), &soft_labels[i])?;
        for (dst, g) in grads.logits_raw.row_mut(i).iter_mut().zip(g_clf) {
            *dst = cfg.w_clf * inv * g;
        }
        for (dst, g) in grads.logits_mixed.row_mut(i).iter_mut().zip(g_mix) {
            *dst = cfg.w_mix * inv * g;
        }
        per_sample.push(SampleLoss { con: con.per_sample[i], mix, clf });
    }
    let mean = |f: fn(&SampleLoss) -> f64| per_sample.iter().map(f).sum::<f64>() * inv;
    let report = LossReport {
        l_con: mean(|s| s.con),
        l_mix: mean(|s| s.mix),
        l_clf: mean(|s| s.clf),
        l_total: per_sample.iter().map(|s| cfg.w_con * s.con + cfg.w_mix * s.mix + cfg.w_clf * s.clf).sum::<f64>() * inv,
        per_sample,
    };
    Ok((report, grads))
}
