//! End-to-end commands over a dataset directory; the CLI is a thin layer
//! over these functions. Every artifact carries the run config hash.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use crate::config::{RunConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    compute_cam, ensemble_predict, mean_probabilities, roc_points_csv, write_cam_overlays, EvalReport,
};
use crate::model::{read_checkpoint, Model};
use crate::seeding::{rng_for, Stream};
use crate::training::{evaluate_scans, load_labeled, run_training, LabeledScan, RunOptions, TrainOutcome};
use crate::volume::{
    generate_phantom, load_scan, read_labels_csv, split_manifest, write_labels_csv, write_scan, Manifest, Phantom,
    PhantomConfig, ScanRecord, Split,
};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Phantoms for `cfg`: the first `round(scans * covid_fraction)` are class 1.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<Phantom>> {
    let positives = (cfg.scans as f64 * cfg.covid_fraction).round() as usize;
    (0..cfg.scans)
        .map(|i| {
            let seed = rng_for(Stream::Phantom, &[cfg.generator.seed, u64::MAX, i as u64]).random::<u64>();
            let class = usize::from(i < positives);
            generate_phantom(&PhantomConfig { seed, ..cfg.generator.clone() }, class)
        })
        .collect()
}

fn refuse_non_empty(dir: &Path, force: bool) -> Result<()> {
    if !force && dir.is_dir() && std::fs::read_dir(dir)?.next().is_some() {
        return Err(Error::Refused(format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthSummary {
    pub config_hash: String,
    pub scans: usize,
    pub positives: usize,
    pub train: usize,
    pub val: usize,
}

/// Write phantoms as slice images plus `labels.csv`, a stratified
/// `manifest.csv` and `synth.json`.
pub fn cmd_synth_data(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<SynthSummary> {
    refuse_non_empty(out_dir, force)?;
    std::fs::create_dir_all(out_dir)?;
    let phantoms = synthesize(&cfg.phantom)?;
    let mut records = Vec::with_capacity(phantoms.len());
    for p in &phantoms {
        let dir = out_dir.join(&p.record.scan_id);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        write_scan(&p.volume, &dir)?;
        records.push(ScanRecord { path: dir, ..p.record.clone() });
    }
    write_labels_csv(&records, out_dir)?;
    let (train, val) = split_manifest(&records, cfg.data.split, cfg.data.split_seed)?;
    std::fs::write(out_dir.join(MANIFEST_FILE), Manifest::from_splits(&train, &val).to_csv())?;
    let summary = SynthSummary {
        config_hash: cfg.hash(),
        scans: records.len(),
        positives: records.iter().filter(|r| r.label == 1).count(),
        train: train.len(),
        val: val.len(),
    };
    write_json(&out_dir.join("synth.json"), &summary)?;
    Ok(summary)
}

/// Records of one split: from `manifest.csv` when present, else a fresh
/// stratified split of `labels.csv`.
pub fn split_records(cfg: &RunConfig, root: &Path, split: Split) -> Result<Vec<ScanRecord>> {
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        return Ok(Manifest::parse(&std::fs::read_to_string(manifest_path)?)?.records(split, root));
    }
    let (train, val) = split_manifest(&read_labels_csv(root)?, cfg.data.split, cfg.data.split_seed)?;
    match split {
        Split::Train => Ok(train),
        Split::Val => Ok(val),
        Split::Test => Err(Error::invalid("no test split without a manifest")),
    }
}

pub fn load_split(cfg: &RunConfig, root: &Path, split: Split) -> Result<Vec<LabeledScan>> {
    load_labeled(&split_records(cfg, root, split)?, cfg.data.resize)
}

/// Train on the manifest's train split, validating on its val split. A
/// non-empty `out_dir` is only reused when resuming or forced.
pub fn cmd_train(cfg: &RunConfig, root: &Path, out_dir: &Path, opts: RunOptions, force: bool) -> Result<TrainOutcome> {
    if !opts.resume {
        refuse_non_empty(out_dir, force)?;
    }
    let train = load_split(cfg, root, Split::Train)?;
    let val = load_split(cfg, root, Split::Val)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    write_json(&out_dir.join("run.json"), &serde_json::json!({ "config_hash": cfg.hash(), "name": cfg.name }))?;
    run_training(cfg, &train, &val, out_dir, opts)
}

pub fn load_model(path: &Path) -> Result<Model> {
    Model::from_checkpoint(&read_checkpoint(path)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct StampedReport {
    pub config_hash: String,
    pub checkpoints: Vec<PathBuf>,
    pub split: Split,
    pub tta_views: usize,
    pub report: EvalReport,
}

fn write_report(out_dir: &Path, stamped: &StampedReport) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("eval_report.json"), stamped)?;
    let roc = roc_points_csv(&stamped.report);
    std::fs::write(out_dir.join("roc.csv"), roc)?;
    Ok(())
}

/// Ensemble evaluation over `checkpoints`; one checkpoint is plain evaluation.
pub fn cmd_ensemble_eval(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    root: &Path,
    split: Split,
    out_dir: &Path,
) -> Result<StampedReport> {
    if checkpoints.is_empty() {
        return Err(Error::invalid("ensemble evaluation needs at least one checkpoint"));
    }
    let models = checkpoints.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let scans = load_split(cfg, root, split)?;
    let labels: Vec<usize> = scans.iter().map(|s| s.label).collect();
    let views = cfg.eval.tta_views;
    let seed = cfg.training.seed;
    let probs = if models.len() == 1 {
        evaluate_scans(&models[0], &scans, &cfg.augmentation, views, seed, cfg.eval.batch_size)?.0
    } else {
        let per_model = models
            .iter()
            .map(|m| evaluate_scans(m, &scans, &cfg.augmentation, views, seed, cfg.eval.batch_size).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        (0..scans.len())
            .map(|i| mean_probabilities(&per_model.iter().map(|p| p[i]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?
    };
    let stamped = StampedReport {
        config_hash: cfg.hash(),
        checkpoints: checkpoints.to_vec(),
        split,
        tta_views: views,
        report: EvalReport::from_probabilities(&probs, &labels)?,
    };
    write_report(out_dir, &stamped)?;
    Ok(stamped)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, root: &Path, split: Split, out_dir: &Path) -> Result<StampedReport> {
    cmd_ensemble_eval(cfg, &[checkpoint.to_path_buf()], root, split, out_dir)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub scan_id: String,
    pub prob_0: f64,
    pub prob_1: f64,
    pub prediction: usize,
    pub config_hash: String,
}

/// Scan directories directly below `input`, in name order.
pub fn scan_dirs(input: &Path) -> Result<Vec<ScanRecord>> {
    if !input.is_dir() {
        return Err(Error::NotFound(input.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs
        .into_iter()
        .map(|path| {
            let scan_id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            ScanRecord { scan_id, label: 0, path }
        })
        .collect())
}

/// Per-scan probabilities for every scan directory below `input`, written
/// as `scan_id,prob_0,prob_1,prediction,config_hash` to `out_csv`.
pub fn cmd_predict(cfg: &RunConfig, checkpoints: &[PathBuf], input: &Path, out_csv: &Path) -> Result<Vec<Prediction>> {
    let models = checkpoints.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Model> = models.iter().collect();
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for record in scan_dirs(input)? {
        let volume = crate::volume::resize_volume(&load_scan(&record)?, cfg.data.resize)?;
        let p = ensemble_predict(&refs, &volume, &cfg.augmentation, cfg.eval.tta_views, cfg.training.seed)?;
        rows.push(Prediction {
            scan_id: record.scan_id,
            prob_0: p[0],
            prob_1: p[1],
            prediction: crate::evaluation::argmax(&p),
            config_hash: hash.clone(),
        });
    }
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(out_csv).map_err(|e| Error::invalid(e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.flush()?;
    Ok(rows)
}

/// CAM overlays for up to `limit` scans of `split` under `out_dir`.
pub fn cmd_cam(
    cfg: &RunConfig,
    checkpoint: &Path,
    root: &Path,
    split: Split,
    out_dir: &Path,
    limit: usize,
) -> Result<Vec<PathBuf>> {
    let model = load_model(checkpoint)?;
    let records: Vec<ScanRecord> = split_records(cfg, root, split)?.into_iter().take(limit).collect();
    let mut written = Vec::new();
    for scan in load_labeled(&records, cfg.data.resize)? {
        let view = crate::augment::eval_transform(&scan.volume, &cfg.augmentation)?;
        let cam = compute_cam(&model, &view, cfg.eval.cam_class)?;
        written.extend(write_cam_overlays(&view, &cam, out_dir)?);
    }
    write_json(
        &out_dir.join("cam.json"),
        &serde_json::json!({ "config_hash": cfg.hash(), "class": cfg.eval.cam_class, "images": written.len() }),
    )?;
    Ok(written)
}
