use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::NUM_CLASSES;

/// `confusion[true][predicted]`.
pub type Confusion = [[usize; NUM_CLASSES]; NUM_CLASSES];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// Fractions in `[0, 1]`.
    pub f1_per_class: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    pub confusion: Confusion,
}

/// Unweighted mean of the per-class scores.
pub fn macro_f1(per_class: [f64; NUM_CLASSES]) -> f64 {
    per_class.iter().sum::<f64>() / NUM_CLASSES as f64
}

fn check_labels(labels: &[usize], n: usize) -> Result<()> {
    if labels.is_empty() || labels.len() != n {
        return Err(Error::invalid(format!("need equal non-empty inputs, got {n} predictions and {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    Ok(())
}

/// Per-class `F1 = 2TP / (2TP + FP + FN)`, 0 when the class never occurs
/// in either predictions or labels.
pub fn f1_scores(predictions: &[usize], labels: &[usize]) -> Result<F1Report> {
    check_labels(labels, predictions.len())?;
    check_labels(predictions, labels.len())?;
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t][p] += 1;
    }
    let mut f1 = [0.0; NUM_CLASSES];
    for (c, f) in f1.iter_mut().enumerate() {
        let tp = confusion[c][c];
        let fp: usize = (0..NUM_CLASSES).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
        let fn_: usize = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let denom = 2 * tp + fp + fn_;
        *f = if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 };
    }
    Ok(F1Report { f1_per_class: f1, macro_f1: macro_f1(f1), confusion })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// One-vs-rest ROC of class `c` scored by `probs[i][c]`, for each class.
/// Tied scores enter the curve together, so the trapezoid area equals the
/// rank statistic with averaged tie ranks.
pub fn roc_auc(probs: &[[f64; NUM_CLASSES]], labels: &[usize]) -> Result<[RocCurve; NUM_CLASSES]> {
    check_labels(labels, probs.len())?;
    if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("scores must lie in [0, 1]"));
    }
    let curve = |c: usize| -> Result<RocCurve> {
        let pos = labels.iter().filter(|&&l| l == c).count();
        let neg = labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::UndefinedMetric(format!("ROC of class {c} needs both positive and negative labels")));
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by(|&a, &b| probs[b][c].total_cmp(&probs[a][c]));
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut points = vec![(0.0, 0.0)];
        let mut auc = 0.0;
        let mut i = 0;
        while i < order.len() {
            let score = probs[order[i]][c];
            while i < order.len() && probs[order[i]][c] == score {
                if labels[order[i]] == c {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            let (x0, y0) = *points.last().expect("non-empty");
            let (x, y) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
            auc += (x - x0) * (y + y0) / 2.0;
            points.push((x, y));
        }
        Ok(RocCurve { points, auc })
    };
    Ok([curve(0)?, curve(1)?])
}

/// Structured evaluation summary; AUC and ROC are absent when a class is
/// missing from the labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub f1_per_class: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    pub auc_per_class: Option<[f64; NUM_CLASSES]>,
    pub roc_points: Option<[Vec<(f64, f64)>; NUM_CLASSES]>,
    pub confusion: Confusion,
}

impl EvalReport {
    pub fn from_probabilities(probs: &[[f64; NUM_CLASSES]], labels: &[usize]) -> Result<Self> {
        let preds: Vec<usize> = probs.iter().map(super::argmax).collect();
        let f1 = f1_scores(&preds, labels)?;
        let (auc_per_class, roc_points) = match roc_auc(probs, labels) {
            Ok([a, b]) => (Some([a.auc, b.auc]), Some([a.points, b.points])),
            Err(Error::UndefinedMetric(_)) => (None, None),
            Err(e) => return Err(e),
        };
        Ok(Self {
            samples: labels.len(),
            f1_per_class: f1.f1_per_class,
            macro_f1: f1.macro_f1,
            auc_per_class,
            roc_points,
            confusion: f1.confusion,
        })
    }
}

/// `class,fpr,tpr` rows.
pub fn roc_points_csv(report: &EvalReport) -> String {
    let mut out = String::from("class,fpr,tpr\n");
    for (c, pts) in report.roc_points.iter().flatten().enumerate() {
        for (x, y) in pts {
            out.push_str(&format!("{c},{x},{y}\n"));
        }
    }
    out
}
