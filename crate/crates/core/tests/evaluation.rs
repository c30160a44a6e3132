mod common;

use cmc_autograd::Tensor;
use cmc_core::augment::{AugmentMode, AugmentationPolicy};
use cmc_core::evaluation::*;
use cmc_core::model::{Model, ModelConfig};
use cmc_core::volume::{generate_phantom, CTVolume, PhantomConfig};
use cmc_core::Error;
use ndarray::Array3;
use rand::Rng;

fn labels_from(confusion: [[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (t, row) in confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            preds.extend(std::iter::repeat_n(p, n));
            labels.extend(std::iter::repeat_n(t, n));
        }
    }
    (preds, labels)
}

#[test]
fn reported_pair_gives_the_reported_macro_score() {
    let macro_score = 100.0 * macro_f1([0.9731, 0.8092]);
    assert!((macro_score - 89.11).abs() <= 0.01, "{macro_score}");
}

#[test]
fn perfect_predictions_score_one() {
    let labels = [0, 1, 1, 0, 1];
    let r = f1_scores(&labels, &labels).unwrap();
    assert_eq!(r.f1_per_class, [1.0, 1.0]);
    assert_eq!(r.macro_f1, 1.0);
}

#[test]
fn class_one_example() {
    // TP=8, FP=2, FN=1 for class 1; 5 true negatives
    let (preds, labels) = labels_from([[5, 2], [1, 8]]);
    let r = f1_scores(&preds, &labels).unwrap();
    assert_eq!(r.f1_per_class[1], 16.0 / 19.0);
    assert_eq!(r.confusion, [[5, 2], [1, 8]]);
}

#[test]
fn random_confusions_match_the_formula() {
    let mut rng = common::rng(6);
    for _ in 0..20 {
        let c: [[usize; 2]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0..30)));
        let (preds, labels) = labels_from(c);
        if labels.is_empty() {
            continue;
        }
        let r = f1_scores(&preds, &labels).unwrap();
        let oracle = common::f1_oracle(c);
        assert_eq!(r.f1_per_class, oracle);
        assert_eq!(r.macro_f1, (oracle[0] + oracle[1]) / 2.0);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), labels.len());
    }
    assert!(matches!(f1_scores(&[], &[]), Err(Error::InvalidArgument(_))));
}

#[test]
fn auc_examples() {
    let labels = [0, 0, 1, 1];
    let probs = [[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]];
    let [a, b] = roc_auc(&probs, &labels).unwrap();
    assert_eq!((a.auc, b.auc), (1.0, 1.0));
    assert_eq!(b.points.first(), Some(&(0.0, 0.0)));
    assert_eq!(b.points.last(), Some(&(1.0, 1.0)));

    let mut rng = common::rng(8);
    let labels: Vec<usize> = (0..4000).map(|_| rng.random_range(0..2)).collect();
    let probs: Vec<[f64; 2]> = (0..4000)
        .map(|_| {
            let p = rng.random::<f64>();
            [1.0 - p, p]
        })
        .collect();
    let auc = roc_auc(&probs, &labels).unwrap()[1].auc;
    assert!((auc - 0.5).abs() < 0.05, "{auc}");

    assert!(matches!(roc_auc(&[[0.5, 0.5]; 3], &[1, 1, 1]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn auc_is_invariant_to_monotone_transforms() {
    let mut rng = common::rng(9);
    for _ in 0..10 {
        let labels: Vec<usize> = (0..60).map(|i| if i < 2 { i } else { rng.random_range(0..2) }).collect();
        // quantised scores force ties
        let scores: Vec<f64> = (0..60).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
        let probs: Vec<[f64; 2]> = scores.iter().map(|&p| [1.0 - p, p]).collect();
        let squashed: Vec<[f64; 2]> = scores.iter().map(|&p| [1.0 - p, p.powi(3)]).collect();
        let a = roc_auc(&probs, &labels).unwrap()[1].auc;
        let b = roc_auc(&squashed, &labels).unwrap()[1].auc;
        assert!((a - b).abs() < 1e-12);
        // rank-statistic oracle with half credit for ties
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..60 {
            for j in 0..60 {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((a - wins / pairs).abs() < 1e-12);
    }
}

#[test]
fn report_is_complete() {
    let probs = [[0.9, 0.1], [0.4, 0.6], [0.2, 0.8], [0.7, 0.3]];
    let r = EvalReport::from_probabilities(&probs, &[0, 0, 1, 1]).unwrap();
    assert_eq!(r.samples, 4);
    assert_eq!(r.macro_f1, (r.f1_per_class[0] + r.f1_per_class[1]) / 2.0);
    assert!(r.auc_per_class.is_some());
    let csv = roc_points_csv(&r);
    assert!(csv.starts_with("class,fpr,tpr\n"));
    let single = EvalReport::from_probabilities(&probs, &[1, 1, 1, 1]).unwrap();
    assert!(single.auc_per_class.is_none());
}

#[test]
fn averaging_is_the_arithmetic_mean() {
    assert_eq!(mean_probabilities(&[[0.9, 0.1], [0.5, 0.5]]).unwrap(), [0.7, 0.3]);
    let views = [[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]];
    let m = mean_probabilities(&views).unwrap();
    assert!((m[0] - (0.2 + 0.6 + 0.1) / 3.0).abs() < 1e-15 && (m[1] - (0.8 + 0.4 + 0.9) / 3.0).abs() < 1e-15);
    assert!(mean_probabilities(&[]).is_err());
}

fn toy_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        stage_depths: vec![1, 1],
        channels: vec![8, 16],
        attention_heads: 2,
        global_stage_start: 1,
        ffn_ratio: 2,
        local_kernel: 3,
        projection_dim: 8,
        ..ModelConfig::default()
    };
    Model::new(cfg, seed).unwrap()
}

fn phantom_volume() -> CTVolume {
    let cfg = PhantomConfig { size: [8, 32, 32], ..Default::default() };
    generate_phantom(&cfg, 1).unwrap().volume
}

#[test]
fn tta_and_ensembles() {
    let model = toy_model(1);
    let v = phantom_volume();
    let policy = AugmentationPolicy::degenerate(AugmentMode::Volume3d, 8, 32);
    let plain = model.predict_proba(&[v.voxels().clone()]).unwrap()[0];
    assert_eq!(predict_tta(&model, &v, &policy, 1, 0).unwrap(), plain);
    assert_eq!(ensemble_predict(&[&model], &v, &policy, 1, 0).unwrap(), plain);
    assert!(matches!(ensemble_predict(&[], &v, &policy, 1, 0), Err(Error::InvalidArgument(_))));

    let busy = AugmentationPolicy { depth_crop: 8, train_resolution: 32, eval_resolution: 32, ..Default::default() };
    let views = tta_views(&v, &busy, 3, 4).unwrap();
    let per_view = model.predict_proba(&views.iter().map(|w| w.voxels().clone()).collect::<Vec<_>>()).unwrap();
    let expected = mean_probabilities(&per_view).unwrap();
    assert_eq!(predict_tta(&model, &v, &busy, 3, 4).unwrap(), expected);

    let other = toy_model(2);
    let both = ensemble_predict(&[&model, &other], &v, &busy, 2, 4).unwrap();
    let each = [predict_tta(&model, &v, &busy, 2, 4).unwrap(), predict_tta(&other, &v, &busy, 2, 4).unwrap()];
    assert_eq!(both, mean_probabilities(&each).unwrap());
    assert!((both[0] + both[1] - 1.0).abs() < 1e-12);
}

#[test]
fn hand_built_grid_maps_to_its_normalization() {
    // a single channel with weight one: the heatmap is the min-max scaled grid
    let grid = Tensor::new(&[1, 2, 2, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let cam = cam_from_grid(&grid, &[1.0], [2, 2, 2]).unwrap();
    for (i, &h) in cam.iter().enumerate() {
        assert!((h - i as f32 / 7.0).abs() < 1e-6);
    }
    // negative evidence is clipped before normalization
    let grid = Tensor::new(&[1, 1, 1, 3], vec![-4.0, 0.0, 2.0]);
    let cam = cam_from_grid(&grid, &[1.0], [1, 1, 3]).unwrap();
    assert_eq!(cam.iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
    assert!(cam_from_grid(&grid, &[1.0, 2.0], [1, 1, 3]).is_err());
}

#[test]
fn cam_contracts() {
    let mut model = toy_model(3);
    let v = phantom_volume();
    let w = model.params.tensors.get_mut("classifier.weight").unwrap();
    *w = w.map(|_| 0.0);
    let cam = compute_cam(&model, &v, 1).unwrap();
    assert!(cam.heatmap.iter().all(|&h| h == 0.0));

    let mut rng = common::rng(3);
    let w = model.params.tensors.get_mut("classifier.weight").unwrap();
    w.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let base = compute_cam(&model, &v, 1).unwrap();
    assert_eq!(base.heatmap.dim(), (8, 32, 32));
    assert!(base.heatmap.iter().all(|h| (0.0..=1.0).contains(h)));
    let w = model.params.tensors.get_mut("classifier.weight").unwrap();
    *w = w.map(|x| x * 3.5);
    let scaled = compute_cam(&model, &v, 1).unwrap();
    let diff = base.heatmap.iter().zip(scaled.heatmap.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(diff < 1e-5, "{diff}");
    assert!(compute_cam(&model, &v, 2).is_err());
}

#[test]
fn overlays_are_written_per_slice() {
    let tmp = tempfile::tempdir().unwrap();
    let v = CTVolume::new("o", Array3::from_elem((3, 8, 8), 0.5)).unwrap();
    let cam = CamVolume { heatmap: Array3::from_shape_fn((3, 8, 8), |(_, y, _)| y as f32 / 7.0), class: 1 };
    let files = write_cam_overlays(&v, &cam, tmp.path()).unwrap();
    assert_eq!(files.len(), 3);
    assert!(files.iter().all(|f| f.is_file()));
    assert_eq!(fire_colormap(0.0), [0.0, 0.0, 0.0]);
    assert_eq!(fire_colormap(1.0), [1.0, 1.0, 1.0]);
}
