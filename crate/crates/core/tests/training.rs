mod common;

use cmc_core::augment::{make_views, AugmentationPolicy, ViewPair};
use cmc_core::config::RunConfig;
use cmc_core::losses::LossConfig;
use cmc_core::mixing::{MixConfig, SeedTuple, Transport};
use cmc_core::model::{Model, ModelConfig};
use cmc_core::pipeline::{cmd_synth_data, cmd_train, load_split};
use cmc_core::training::*;
use cmc_core::volume::{generate_phantom, PhantomConfig, Split};
use cmc_core::Error;

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

fn smoke() -> RunConfig {
    RunConfig::from_toml_with(&std::fs::read_to_string(SMOKE).unwrap(), &[]).unwrap()
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        stage_depths: vec![1, 1],
        channels: vec![8, 16],
        attention_heads: 2,
        global_stage_start: 1,
        ffn_ratio: 2,
        local_kernel: 3,
        projection_dim: 8,
        ..ModelConfig::default()
    }
}

fn pairs(n: usize, seed: u64) -> Vec<ViewPair> {
    let policy = AugmentationPolicy { depth_crop: 8, train_resolution: 32, eval_resolution: 32, ..Default::default() };
    let mut rng = common::rng(seed);
    (0..n)
        .map(|i| {
            let cfg = PhantomConfig { size: [8, 32, 32], seed: seed * 100 + i as u64, ..Default::default() };
            let p = generate_phantom(&cfg, i % 2).unwrap();
            make_views(&p.volume, i % 2, &policy, &mut rng).unwrap()
        })
        .collect()
}

struct Setup {
    train: TrainConfig,
    loss: LossConfig,
    mixing: MixConfig,
}

impl Setup {
    fn new(lr_free: bool) -> Self {
        let train = TrainConfig { weight_decay: if lr_free { 0.0 } else { 1e-4 }, ..TrainConfig::default() };
        Self { train, loss: LossConfig::default(), mixing: MixConfig::default() }
    }

    fn settings(&self, transport: Transport) -> StepSettings<'_> {
        StepSettings { train: &self.train, loss: &self.loss, mixing: &self.mixing, transport }
    }
}

fn max_relative_change(a: &Model, b: &Model, reference: &Model) -> f64 {
    let mut worst = 0.0f64;
    for name in reference.params.names() {
        let (x, y, r) = (a.params.get(name).unwrap(), b.params.get(name).unwrap(), reference.params.get(name).unwrap());
        let dx: Vec<f64> = x.data().iter().zip(r.data()).map(|(p, q)| p - q).collect();
        let dy: Vec<f64> = y.data().iter().zip(r.data()).map(|(p, q)| p - q).collect();
        worst = worst.max(common::relative_error(&dx, &dy));
    }
    worst
}

#[test]
fn two_workers_match_one_worker_on_the_concatenation() {
    let setup = Setup::new(false);
    let data = pairs(2, 1);
    let start = Model::new(tiny_model(), 5).unwrap();
    let st = SeedTuple::new(3, 0, 0);

    let mut single = start.clone();
    let mut adam = AdamState::default();
    let r1 = train_step(&mut single, &mut adam, &[data.clone()], st, 1e-3, setup.settings(Transport::InMemory)).unwrap();

    for transport in [Transport::InMemory, Transport::Wire] {
        let mut split = start.clone();
        let mut adam = AdamState::default();
        let split_pairs = vec![vec![data[0].clone()], vec![data[1].clone()]];
        let r2 = train_step(&mut split, &mut adam, &split_pairs, st, 1e-3, setup.settings(transport)).unwrap();
        assert!((r1.loss.l_total - r2.loss.l_total).abs() <= 1e-12 * r1.loss.l_total.abs());
        let err = max_relative_change(&single, &split, &start);
        assert!(err < 1e-6, "{transport:?}: relative update difference {err}");
    }
}

#[test]
fn one_scan_per_worker_forwards_four_samples() {
    let setup = Setup::new(false);
    let mut model = Model::new(tiny_model(), 0).unwrap();
    let data = pairs(2, 2);
    let split = vec![vec![data[0].clone()], vec![data[1].clone()]];
    let r = train_step(&mut model, &mut AdamState::default(), &split, SeedTuple::new(0, 0, 0), 1e-3, setup.settings(Transport::InMemory))
        .unwrap();
    assert_eq!(r.forwarded_per_worker, 4);
    assert!(r.grad_norm > 0.0);
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let setup = Setup::new(true);
    let start = Model::new(tiny_model(), 0).unwrap();
    let mut model = start.clone();
    train_step(&mut model, &mut AdamState::default(), &[pairs(2, 3)], SeedTuple::new(0, 0, 0), 0.0, setup.settings(Transport::InMemory))
        .unwrap();
    assert_eq!(model.params, start.params);
}

#[test]
fn uneven_workers_are_rejected() {
    let setup = Setup::new(false);
    let mut model = Model::new(tiny_model(), 0).unwrap();
    let data = pairs(3, 4);
    let uneven = vec![data[..2].to_vec(), data[2..].to_vec()];
    let err = train_step(&mut model, &mut AdamState::default(), &uneven, SeedTuple::new(0, 0, 0), 1e-3, setup.settings(Transport::InMemory));
    assert!(matches!(err, Err(Error::Protocol(_))));
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig { epochs: 10, base_lr: 1.0, lr_drop_points: vec![0.3, 0.8], ..TrainConfig::default() };
    let lrs: Vec<f64> = (0..10).map(|e| lr_at(e, &cfg).unwrap()).collect();
    assert_eq!(lrs, vec![1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.01, 0.01]);
    let flat = TrainConfig { lr_drop_points: vec![], ..cfg.clone() };
    assert!((0..10).all(|e| lr_at(e, &flat).unwrap() == 1.0));
    assert!(matches!(lr_at(10, &cfg), Err(Error::InvalidArgument(_))));
    assert!(TrainConfig { lr_drop_points: vec![0.8, 0.3], ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { lr_drop_points: vec![1.0], ..cfg }.validate().is_err());
}

#[test]
fn smoke_run_emits_one_row_per_epoch_and_resumes_exactly() {
    let cfg = smoke();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_synth_data(&cfg, &data, false).unwrap();
    let train = load_split(&cfg, &data, Split::Train).unwrap();
    let val = load_split(&cfg, &data, Split::Val).unwrap();
    assert_eq!(train.len() + val.len(), 8);

    let full = run_training(&cfg, &train, &val, &tmp.path().join("full"), RunOptions::default()).unwrap();
    assert_eq!(full.history.len(), 2);
    let csv = std::fs::read_to_string(&full.metrics_csv).unwrap();
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
    assert_eq!(csv.lines().count(), 3);
    assert!(full.best_checkpoint.is_file() && full.last_checkpoint.is_file());

    let again = run_training(&cfg, &train, &val, &tmp.path().join("again"), RunOptions::default()).unwrap();
    assert_eq!(again.history, full.history);

    let dir = tmp.path().join("resumed");
    let first = RunOptions { stop_after_epoch: Some(0), ..RunOptions::default() };
    assert_eq!(run_training(&cfg, &train, &val, &dir, first).unwrap().history.len(), 1);
    let resumed = run_training(&cfg, &train, &val, &dir, RunOptions { resume: true, ..RunOptions::default() }).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.best_model.params, full.best_model.params);
}

#[test]
fn train_refuses_a_used_directory() {
    let cfg = smoke();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_synth_data(&cfg, &data, false).unwrap();
    let out = tmp.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("stale"), "x").unwrap();
    assert!(matches!(cmd_train(&cfg, &data, &out, RunOptions::default(), false), Err(Error::Refused(_))));
}
