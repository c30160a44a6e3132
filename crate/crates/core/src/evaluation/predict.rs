use crate::augment::{augment_recorded, eval_transform, AugmentationPolicy};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seeding::{rng_for, Stream};
use crate::volume::CTVolume;

pub fn argmax(p: &[f64; 2]) -> usize {
    usize::from(p[1] > p[0])
}

/// Unweighted mean of probability vectors.
pub fn mean_probabilities(probs: &[[f64; 2]]) -> Result<[f64; 2]> {
    if probs.is_empty() {
        return Err(Error::invalid("cannot average zero probability vectors"));
    }
    let n = probs.len() as f64;
    let sum = probs.iter().fold([0.0; 2], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
    Ok([sum[0] / n, sum[1] / n])
}

fn name_key(scan_id: &str) -> u64 {
    scan_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// `n_views` inputs: the deterministic eval view followed by `n_views - 1`
/// augmented views at eval resolution with halved photometric ranges.
pub fn tta_views(volume: &CTVolume, policy: &AugmentationPolicy, n_views: usize, seed: u64) -> Result<Vec<CTVolume>> {
    if n_views == 0 {
        return Err(Error::invalid("n_views must be at least 1"));
    }
    let mut views = vec![eval_transform(volume, policy)?];
    let tta = policy.tta();
    for view in 1..n_views {
        let mut rng = rng_for(Stream::Tta, &[seed, name_key(&volume.scan_id), view as u64]);
        views.push(augment_recorded(volume, &tta, &mut rng)?.0);
    }
    Ok(views)
}

/// Mean softmax over the views returned by [`tta_views`].
pub fn predict_tta(model: &Model, volume: &CTVolume, policy: &AugmentationPolicy, n_views: usize, seed: u64) -> Result<[f64; 2]> {
    let views = tta_views(volume, policy, n_views, seed)?;
    let voxels: Vec<_> = views.into_iter().map(CTVolume::into_voxels).collect();
    mean_probabilities(&model.predict_proba(&voxels)?)
}

/// Unweighted mean of each model's TTA prediction.
pub fn ensemble_predict(
    models: &[&Model],
    volume: &CTVolume,
    policy: &AugmentationPolicy,
    n_views: usize,
    seed: u64,
) -> Result<[f64; 2]> {
    if models.is_empty() {
        return Err(Error::invalid("ensemble needs at least one model"));
    }
    let per_model = models
        .iter()
        .map(|m| predict_tta(m, volume, policy, n_views, seed))
        .collect::<Result<Vec<_>>>()?;
    mean_probabilities(&per_model)
}
