use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::MixMode;
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedTuple {
    pub global_seed: u64,
    pub epoch: u64,
    pub step: u64,
}

impl SeedTuple {
    pub fn new(global_seed: u64, epoch: u64, step: u64) -> Self {
        Self { global_seed, epoch, step }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    Mixup,
    Cutmix,
}

/// Half-open voxel box `[z0,z1) x [y0,y1) x [x0,x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutBox {
    pub z0: usize,
    pub z1: usize,
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn voxels(&self) -> usize {
        self.z1.saturating_sub(self.z0) * self.y1.saturating_sub(self.y0) * self.x1.saturating_sub(self.x0)
    }

    pub fn fits(&self, shape: [usize; 3]) -> bool {
        self.z0 <= self.z1
            && self.y0 <= self.y1
            && self.x0 <= self.x1
            && self.z1 <= shape[0]
            && self.y1 <= shape[1]
            && self.x1 <= shape[2]
    }

    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        (self.z0..self.z1).contains(&z) && (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    /// `1 - box/total`, the share of voxels kept from the anchor sample.
    pub fn kept_fraction(&self, shape: [usize; 3]) -> f64 {
        1.0 - self.voxels() as f64 / shape.iter().product::<usize>() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixDecision {
    pub strategy: MixStrategy,
    /// Weight of the anchor sample; for cutmix the exact kept-voxel fraction.
    pub lambda: f64,
    /// `permutation[i]` is the partner of position `i`; has no fixed points.
    pub permutation: Vec<usize>,
    pub cut_box: Option<CutBox>,
    pub seed_tuple: SeedTuple,
}

/// Uniformly random permutation without fixed points (rejection sampling).
pub fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    if n < 2 {
        return p;
    }
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

fn cut_box(lambda: f64, shape: [usize; 3], rng: &mut impl Rng) -> CutBox {
    let side_frac = (1.0 - lambda).max(0.0).cbrt();
    let mut bounds = [(0usize, 0usize); 3];
    for (b, &dim) in bounds.iter_mut().zip(&shape) {
        let side = ((dim as f64 * side_frac).round() as usize).min(dim);
        let start = rng.random_range(0..=dim - side);
        *b = (start, start + side);
    }
    CutBox {
        z0: bounds[0].0,
        z1: bounds[0].1,
        y0: bounds[1].0,
        y1: bounds[1].1,
        x0: bounds[2].0,
        x1: bounds[2].1,
    }
}

/// Decision for a batch of `batch_size` volumes of `shape` under `mode`;
/// a pure function of its arguments.
pub fn sample_decision(
    mode: MixMode,
    batch_size: usize,
    seed_tuple: SeedTuple,
    alpha: f64,
    shape: [usize; 3],
) -> Result<MixDecision> {
    if batch_size < 2 {
        return Err(Error::invalid(format!("mixing needs at least 2 samples, got {batch_size}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("mix alpha must be positive and finite, got {alpha}")));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!("volume shape {shape:?} has an empty axis")));
    }
    let mut rng = rng_for(Stream::Mix, &[seed_tuple.global_seed, seed_tuple.epoch, seed_tuple.step]);
    let coin = rng.random_bool(0.5);
    let strategy = match mode {
        MixMode::Hybrid if coin => MixStrategy::Cutmix,
        MixMode::Hybrid | MixMode::Mixup => MixStrategy::Mixup,
        MixMode::Cutmix => MixStrategy::Cutmix,
    };
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("beta({alpha}): {e}")))?;
    let mut lambda = beta.sample(&mut rng).clamp(0.0, 1.0);
    let permutation = derangement(batch_size, &mut rng);
    let cut_box = match strategy {
        MixStrategy::Mixup => None,
        MixStrategy::Cutmix => {
            let b = cut_box(lambda, shape, &mut rng);
            lambda = b.kept_fraction(shape);
            Some(b)
        }
    };
    Ok(MixDecision { strategy, lambda, permutation, cut_box, seed_tuple })
}

/// Hybrid decision: mixup or cutmix with equal probability.
pub fn sample_mix_decision(
    batch_size: usize,
    seed_tuple: SeedTuple,
    alpha: f64,
    shape: [usize; 3],
) -> Result<MixDecision> {
    sample_decision(MixMode::Hybrid, batch_size, seed_tuple, alpha, shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: [usize; 3] = [8, 16, 16];

    #[test]
    fn deterministic_per_seed_tuple() {
        let s = SeedTuple::new(3, 1, 4);
        assert_eq!(sample_mix_decision(6, s, 0.2, SHAPE).unwrap(), sample_mix_decision(6, s, 0.2, SHAPE).unwrap());
    }

    #[test]
    fn rejects_single_sample() {
        assert!(matches!(sample_mix_decision(1, SeedTuple::new(0, 0, 0), 0.2, SHAPE), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn large_alpha_concentrates_lambda_at_half() {
        let mut sum = 0.0;
        for step in 0..1000 {
            sum += sample_decision(MixMode::Mixup, 2, SeedTuple::new(9, 0, step), 1e6, SHAPE).unwrap().lambda;
        }
        assert!((sum / 1000.0 - 0.5).abs() < 1e-2);
    }

    #[test]
    fn strategies_are_balanced() {
        let cutmix = (0..10_000)
            .filter(|&step| {
                sample_mix_decision(2, SeedTuple::new(1, 0, step), 0.2, SHAPE).unwrap().strategy == MixStrategy::Cutmix
            })
            .count() as f64
            / 10_000.0;
        assert!((0.48..=0.52).contains(&cutmix), "cutmix share {cutmix}");
    }

    #[test]
    fn derangements_have_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 2..12 {
            for _ in 0..50 {
                let p = derangement(n, &mut rng);
                let mut sorted = p.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
                assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            }
        }
    }

    #[test]
    fn cutmix_lambda_is_the_kept_fraction() {
        for step in 0..200 {
            let d = sample_decision(MixMode::Cutmix, 4, SeedTuple::new(5, 2, step), 0.2, SHAPE).unwrap();
            let b = d.cut_box.unwrap();
            assert!(b.fits(SHAPE));
            assert_eq!(d.lambda, 1.0 - b.voxels() as f64 / 2048.0);
        }
    }
}
