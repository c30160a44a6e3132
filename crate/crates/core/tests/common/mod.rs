//! Independent oracles shared by the integration and acceptance targets.
//! Nothing here calls the code under test except to build inputs.
#![allow(dead_code)]

use cmc_autograd::Tensor;
use cmc_core::mixing::{Sample, SeedTuple, WorkerBatch};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n x d` tensor with unit rows drawn from a Gaussian direction.
pub fn unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Tensor::new(&[n, d], data)
}

/// Supervised contrastive loss per anchor by literal summation over every
/// `(i, j, k)` triple, normalized by the positive count of the anchor.
pub fn supcon_oracle(rows: &[Vec<f64>], labels: &[usize], tau: f64) -> Vec<f64> {
    let n = rows.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    (0..n)
        .map(|i| {
            let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if positives.is_empty() {
                return 0.0;
            }
            let mut total = 0.0;
            for &j in &positives {
                let num = (dot(&rows[i], &rows[j]) / tau).exp();
                let mut den = 0.0;
                for k in 0..n {
                    if k != i {
                        den += (dot(&rows[i], &rows[k]) / tau).exp();
                    }
                }
                total += -(num / den).ln();
            }
            total / positives.len() as f64
        })
        .collect()
}

/// `-sum_c y_c log(exp(l_c) / sum_k exp(l_k))` without any stabilization.
pub fn cross_entropy_oracle(logits: &[f64], label: &[f64]) -> f64 {
    let den: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().zip(label).map(|(l, y)| -y * (l.exp() / den).ln()).sum()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Per-class `2TP / (2TP + FP + FN)` read off a `confusion[true][pred]` table.
pub fn f1_oracle(confusion: [[usize; 2]; 2]) -> [f64; 2] {
    std::array::from_fn(|c| {
        let o = 1 - c;
        let (tp, fp, fn_) = (confusion[c][c], confusion[o][c], confusion[c][o]);
        let den = 2 * tp + fp + fn_;
        if den == 0 {
            0.0
        } else {
            (2 * tp) as f64 / den as f64
        }
    })
}

/// `W` workers, each holding `local` scans as two adjacent views.
pub fn worker_batches(rng: &mut impl Rng, workers: usize, local: usize, shape: [usize; 3], seed: SeedTuple) -> Vec<WorkerBatch> {
    (0..workers)
        .map(|rank| {
            let mut samples = Vec::with_capacity(2 * local);
            for _ in 0..local {
                let class = rng.random_range(0..2);
                for _ in 0..2 {
                    let voxels = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |_| rng.random::<f32>());
                    samples.push(Sample::one_hot(voxels, class));
                }
            }
            WorkerBatch { rank, seed_tuple: seed, samples }
        })
        .collect()
}

pub fn max_abs_diff(a: &Sample, b: &Sample) -> f64 {
    let v = a.voxels.iter().zip(b.voxels.iter()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
    let l = a.label.iter().zip(&b.label).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    v.max(l)
}

/// Number of 6-connected components of `true` voxels.
pub fn connected_components(mask: &Array3<bool>) -> usize {
    let (t, h, w) = mask.dim();
    let mut seen = Array3::from_elem((t, h, w), false);
    let mut count = 0;
    for start in mask.indexed_iter().filter(|(_, &m)| m).map(|(i, _)| i) {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some((z, y, x)) = stack.pop() {
            let neighbours = [
                (z.wrapping_sub(1), y, x),
                (z + 1, y, x),
                (z, y.wrapping_sub(1), x),
                (z, y + 1, x),
                (z, y, x.wrapping_sub(1)),
                (z, y, x + 1),
            ];
            for p in neighbours {
                if p.0 < t && p.1 < h && p.2 < w && mask[p] && !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
    }
    count
}
