use ndarray::{Array3, Zip};

use super::{CutBox, MixDecision, MixStrategy, MixedBatch, Sample};
use crate::error::{Error, Result};

fn check_batch(batch: &[Sample], decision: &MixDecision) -> Result<[usize; 3]> {
    let first = batch.first().ok_or_else(|| Error::invalid("cannot mix an empty batch"))?;
    let dim = first.voxels.dim();
    if let Some(bad) = batch.iter().position(|s| s.voxels.dim() != dim) {
        return Err(Error::invalid(format!(
            "sample {bad} has shape {:?}, expected {dim:?}",
            batch[bad].voxels.dim()
        )));
    }
    let n = batch.len();
    let mut seen = vec![false; n];
    for &p in &decision.permutation {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid(format!("permutation {:?} is not a bijection on {n}", decision.permutation)));
        }
    }
    if decision.permutation.len() != n {
        return Err(Error::invalid(format!("permutation length {} != batch size {n}", decision.permutation.len())));
    }
    Ok([dim.0, dim.1, dim.2])
}

fn mix_labels(a: [f64; 2], b: [f64; 2], lambda: f64) -> [f64; 2] {
    [lambda * a[0] + (1.0 - lambda) * b[0], lambda * a[1] + (1.0 - lambda) * b[1]]
}

/// `x_i <- lambda x_i + (1 - lambda) x_p(i)` on voxels and labels.
pub fn apply_mixup(batch: &[Sample], decision: &MixDecision) -> Result<MixedBatch> {
    if decision.strategy != MixStrategy::Mixup {
        return Err(Error::invalid("apply_mixup needs a mixup decision"));
    }
    check_batch(batch, decision)?;
    let lambda = decision.lambda;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let mixed = batch
        .iter()
        .zip(&decision.permutation)
        .map(|(s, &p)| {
            let partner = &batch[p];
            let voxels = Zip::from(&s.voxels)
                .and(&partner.voxels)
                .map_collect(|&a, &b| (lambda * a as f64 + (1.0 - lambda) * b as f64) as f32);
            Sample { voxels, label: mix_labels(s.label, partner.label, lambda) }
        })
        .collect();
    Ok(MixedBatch { raw: batch.to_vec(), mixed })
}

/// Voxels inside the cut box come from the partner; labels are weighted by
/// the exact kept-voxel fraction of the box.
pub fn apply_cutmix(batch: &[Sample], decision: &MixDecision) -> Result<MixedBatch> {
    if decision.strategy != MixStrategy::Cutmix {
        return Err(Error::invalid("apply_cutmix needs a cutmix decision"));
    }
    let shape = check_batch(batch, decision)?;
    let cut: CutBox = decision.cut_box.ok_or_else(|| Error::invalid("cutmix decision has no cut box"))?;
    if !cut.fits(shape) {
        return Err(Error::invalid(format!("cut box {cut:?} exceeds volume shape {shape:?}")));
    }
    let lambda = cut.kept_fraction(shape);
    let mixed = batch
        .iter()
        .zip(&decision.permutation)
        .map(|(s, &p)| {
            let partner = &batch[p];
            let voxels = Array3::from_shape_fn(s.voxels.dim(), |(z, y, x)| {
                if cut.contains(z, y, x) {
                    partner.voxels[[z, y, x]]
                } else {
                    s.voxels[[z, y, x]]
                }
            });
            Sample { voxels, label: mix_labels(s.label, partner.label, lambda) }
        })
        .collect();
    Ok(MixedBatch { raw: batch.to_vec(), mixed })
}

pub fn apply_mix(batch: &[Sample], decision: &MixDecision) -> Result<MixedBatch> {
    match decision.strategy {
        MixStrategy::Mixup => apply_mixup(batch, decision),
        MixStrategy::Cutmix => apply_cutmix(batch, decision),
    }
}
