use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{lr_at, train_step, AdamState, StepSettings};
use crate::augment::{eval_transform, make_views, AugmentationPolicy};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{predict_tta, EvalReport};
use crate::mixing::{SeedTuple, Transport};
use crate::model::{read_checkpoint, write_checkpoint, Model};
use crate::seeding::{rng_for, Stream};
use crate::volume::{load_scan, resize_volume, CTVolume, ScanRecord};

pub const METRICS_HEADER: &str = "epoch,lr,l_con,l_mix,l_clf,l_total,val_macro_f1,val_f1_0,val_f1_1";

#[derive(Clone, Debug)]
pub struct LabeledScan {
    pub volume: CTVolume,
    pub label: usize,
}

/// Load and resample every record to `resize`.
pub fn load_labeled(records: &[ScanRecord], resize: [usize; 3]) -> Result<Vec<LabeledScan>> {
    records
        .iter()
        .map(|r| Ok(LabeledScan { volume: resize_volume(&load_scan(r)?, resize)?, label: r.label }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub l_con: f64,
    pub l_mix: f64,
    pub l_clf: f64,
    pub l_total: f64,
    pub val_macro_f1: f64,
    pub val_f1_0: f64,
    pub val_f1_1: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.l_con, self.l_mix, self.l_clf, self.l_total, self.val_macro_f1, self.val_f1_0, self.val_f1_1
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Continue from `last.ckpt` in the output directory when present.
    pub resume: bool,
    /// Return after finishing this epoch index, as if interrupted.
    pub stop_after_epoch: Option<usize>,
    pub transport: Transport,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { resume: false, stop_after_epoch: None, transport: Transport::InMemory }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the best validation macro F1.
    pub best_model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

/// Probabilities and report for `scans` under the eval transform
/// (`n_views == 1`) or test-time augmentation.
pub fn evaluate_scans(
    model: &Model,
    scans: &[LabeledScan],
    policy: &AugmentationPolicy,
    n_views: usize,
    seed: u64,
    batch_size: usize,
) -> Result<(Vec<[f64; 2]>, EvalReport)> {
    let mut probs = Vec::with_capacity(scans.len());
    if n_views == 1 {
        for chunk in scans.chunks(batch_size.max(1)) {
            let views = chunk
                .iter()
                .map(|s| eval_transform(&s.volume, policy).map(CTVolume::into_voxels))
                .collect::<Result<Vec<_>>>()?;
            probs.extend(model.predict_proba(&views)?);
        }
    } else {
        for s in scans {
            probs.push(predict_tta(model, &s.volume, policy, n_views, seed)?);
        }
    }
    let labels: Vec<usize> = scans.iter().map(|s| s.label).collect();
    let report = EvalReport::from_probabilities(&probs, &labels)?;
    Ok((probs, report))
}

/// Largest worker count `<= workers` dividing `remaining` scans evenly.
fn partial_split(remaining: usize, workers: usize) -> (usize, usize) {
    let w = (1..=workers.min(remaining)).rev().find(|w| remaining % w == 0).unwrap_or(1);
    (w, remaining / w)
}

#[derive(Serialize, Deserialize)]
struct ResumeState {
    adam_step: u64,
    history: Vec<EpochMetrics>,
    best_epoch: usize,
    best_macro_f1: f64,
}

struct Paths {
    best: PathBuf,
    last: PathBuf,
    metrics: PathBuf,
}

fn rewrite_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut text = format!("{METRICS_HEADER}\n");
    for m in history {
        text.push_str(&m.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    writeln!(f, "{}", m.csv_row())?;
    Ok(())
}

/// Epoch loop: seeded sampling, two-view augmentation, data-parallel steps,
/// per-epoch validation, best and last checkpoints and a metrics CSV in
/// `out_dir`. Every random draw derives from `(seed, epoch, index)`, so a
/// resumed run repeats the uninterrupted one exactly.
pub fn run_training(
    cfg: &RunConfig,
    train: &[LabeledScan],
    val: &[LabeledScan],
    out_dir: &Path,
    opts: RunOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    std::fs::create_dir_all(out_dir)?;
    let paths = Paths {
        best: out_dir.join("best.ckpt"),
        last: out_dir.join("last.ckpt"),
        metrics: out_dir.join("metrics.csv"),
    };
    let tc = &cfg.training;
    let hash = cfg.hash();
    let settings = StepSettings { train: tc, loss: &cfg.loss, mixing: &cfg.mixing, transport: opts.transport };

    let mut model = Model::new(cfg.model.clone(), tc.seed)?;
    let mut adam = AdamState::default();
    let mut history = Vec::new();
    let (mut best_epoch, mut best_f1) = (0usize, f64::NEG_INFINITY);
    let mut best_model = model.clone();
    let mut start = 0;

    if opts.resume && paths.last.exists() {
        let ckpt = read_checkpoint(&paths.last)?;
        if ckpt.metadata.config_hash != hash {
            return Err(Error::Checkpoint(format!(
                "{} was written by config {}, not {hash}",
                paths.last.display(),
                ckpt.metadata.config_hash
            )));
        }
        let state: ResumeState = serde_json::from_value(ckpt.metadata.extra["resume"].clone())
            .map_err(|e| Error::Checkpoint(format!("resume state unreadable: {e}")))?;
        let mut params = ckpt.clone();
        params.tensors.retain(|k, _| !k.starts_with("optim."));
        model = Model::from_checkpoint(&params)?;
        adam = AdamState::from_tensors(state.adam_step, &ckpt.tensors);
        best_model = Model::from_checkpoint(&read_checkpoint(&paths.best)?)?;
        (best_epoch, best_f1, history) = (state.best_epoch, state.best_macro_f1, state.history);
        start = ckpt.metadata.epoch as usize + 1;
        info!("resuming at epoch {start}");
    }
    rewrite_metrics(&paths.metrics, &history)?;

    let global = tc.workers * tc.local_batch;
    for epoch in start..tc.epochs {
        let lr = lr_at(epoch, tc)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(Stream::Sampler, &[tc.seed, epoch as u64]));

        let (mut sums, mut rows) = ([0.0f64; 4], 0usize);
        let (mut pos, mut step) = (0usize, 0u64);
        while pos < order.len() {
            let take = global.min(order.len() - pos);
            let (workers, local) = if take == global { (tc.workers, tc.local_batch) } else { partial_split(take, tc.workers) };
            let mut worker_pairs = Vec::with_capacity(workers);
            for w in 0..workers {
                let mut pairs = Vec::with_capacity(local);
                for k in 0..local {
                    let idx = pos + w * local + k;
                    let scan = &train[order[idx]];
                    let mut rng = rng_for(Stream::Augment, &[tc.seed, epoch as u64, idx as u64]);
                    pairs.push(make_views(&scan.volume, scan.label, &cfg.augmentation, &mut rng)?);
                }
                worker_pairs.push(pairs);
            }
            let report = train_step(&mut model, &mut adam, &worker_pairs, SeedTuple::new(tc.seed, epoch as u64, step), lr, settings)?;
            let n = report.loss.per_sample.len();
            for (s, v) in sums.iter_mut().zip([report.loss.l_con, report.loss.l_mix, report.loss.l_clf, report.loss.l_total]) {
                *s += v * n as f64;
            }
            rows += n;
            pos += take;
            step += 1;
        }

        let (_, report) = evaluate_scans(&model, val, &cfg.augmentation, 1, tc.seed, cfg.eval.batch_size)?;
        let m = EpochMetrics {
            epoch,
            lr,
            l_con: sums[0] / rows as f64,
            l_mix: sums[1] / rows as f64,
            l_clf: sums[2] / rows as f64,
            l_total: sums[3] / rows as f64,
            val_macro_f1: report.macro_f1,
            val_f1_0: report.f1_per_class[0],
            val_f1_1: report.f1_per_class[1],
        };
        info!("epoch {epoch}: loss {:.4} val macro F1 {:.4}", m.l_total, m.val_macro_f1);
        history.push(m.clone());

        if m.val_macro_f1 > best_f1 {
            (best_epoch, best_f1) = (epoch, m.val_macro_f1);
            best_model = model.clone();
            let extra = serde_json::json!({ "val": report, "run_name": cfg.name });
            write_checkpoint(&best_model.to_checkpoint(&hash, epoch as u64, extra), &paths.best)?;
        }
        let state = ResumeState { adam_step: adam.step, history: history.clone(), best_epoch, best_macro_f1: best_f1 };
        let mut last = model.to_checkpoint(&hash, epoch as u64, serde_json::json!({ "resume": state, "run_name": cfg.name }));
        last.tensors.extend(adam.to_tensors());
        write_checkpoint(&last, &paths.last)?;
        append_metrics(&paths.metrics, &m)?;

        if opts.stop_after_epoch == Some(epoch) {
            break;
        }
    }
    Ok(TrainOutcome {
        best_model,
        best_epoch,
        history,
        best_checkpoint: paths.best,
        last_checkpoint: paths.last,
        metrics_csv: paths.metrics,
    })
}
