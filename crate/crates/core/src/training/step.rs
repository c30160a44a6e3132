use cmc_autograd::{Graph, Tensor};

use super::{AdamState, TrainConfig};
use crate::augment::ViewPair;
use crate::error::{Error, Result};
use crate::losses::{total_loss, BatchEmbedding, LossConfig, LossReport};
use crate::mixing::{gather_dispatch, MixConfig, MixedBatch, Sample, SeedTuple, Transport, WorkerBatch};
use crate::model::{volumes_to_tensor, ForwardOutput, Model};

/// Configuration slices a training step needs.
#[derive(Clone, Copy, Debug)]
pub struct StepSettings<'a> {
    pub train: &'a TrainConfig,
    pub loss: &'a LossConfig,
    pub mixing: &'a MixConfig,
    pub transport: Transport,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub loss: LossReport,
    /// Samples each worker pushed through the network (raw plus mixed).
    pub forwarded_per_worker: usize,
    /// Norm of the averaged gradient over all parameters.
    pub grad_norm: f64,
}

struct WorkerForward {
    graph: Graph,
    out: ForwardOutput,
    raw_rows: usize,
}

fn forward_worker(model: &Model, batch: &MixedBatch) -> Result<WorkerForward> {
    let mut graph = Graph::new();
    let volumes = batch.raw.iter().chain(&batch.mixed).map(|s| &s.voxels);
    let x = graph.constant(volumes_to_tensor(volumes)?);
    let out = model.forward(&mut graph, x, true)?;
    Ok(WorkerForward { graph, out, raw_rows: batch.raw.len() })
}

fn label_of(s: &Sample) -> usize {
    usize::from(s.label[1] > s.label[0])
}

/// Rows `[start, start + len)` of `src` scaled by `factor`, padded with
/// zero rows to `total`.
fn seed_rows(src: &Tensor, start: usize, len: usize, factor: f64, total: usize, offset: usize) -> Tensor {
    let cols = src.shape()[1];
    let mut out = Tensor::zeros(&[total, cols]);
    for r in 0..len {
        for (d, s) in out.row_mut(offset + r).iter_mut().zip(src.row(start + r)) {
            *d = factor * s;
        }
    }
    out
}

/// One data-parallel optimization step.
///
/// Each worker turns its scans into two raw views; the gather-and-dispatch
/// protocol produces one mixed sample per raw view. Every worker forwards
/// its raw and mixed samples, outputs are all-gathered in rank order, the
/// joint loss is evaluated on the gathered batch, each worker back-propagates
/// its own rows, and the per-worker gradients are averaged in rank order
/// before one Adam update.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    worker_pairs: &[Vec<ViewPair>],
    seed_tuple: SeedTuple,
    lr: f64,
    settings: StepSettings,
) -> Result<StepReport> {
    let workers = worker_pairs.len();
    if workers == 0 || worker_pairs.iter().any(|p| p.len() != worker_pairs[0].len() || p.is_empty()) {
        return Err(Error::Protocol("every worker needs the same non-zero number of scans".into()));
    }
    let batches: Vec<WorkerBatch> = worker_pairs
        .iter()
        .enumerate()
        .map(|(rank, pairs)| WorkerBatch {
            rank,
            seed_tuple,
            samples: pairs
                .iter()
                .flat_map(|p| {
                    [
                        Sample::one_hot(p.view_a.voxels().clone(), p.label),
                        Sample::one_hot(p.view_b.voxels().clone(), p.label),
                    ]
                })
                .collect(),
        })
        .collect();
    let mixed = gather_dispatch(batches, settings.mixing, settings.transport)?;

    let model_ref: &Model = model;
    let forwards: Vec<WorkerForward> = std::thread::scope(|s| {
        let handles: Vec<_> = mixed.iter().map(|b| s.spawn(move || forward_worker(model_ref, b))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect::<Result<Vec<_>>>()
    })?;

    // all-gather of raw projections, raw logits and mixed logits
    let gather = |pick: &dyn Fn(&WorkerForward) -> Tensor| Tensor::concat_rows(&forwards.iter().map(pick).collect::<Vec<_>>());
    let z = gather(&|w| w.graph.value(w.out.z).slice_rows(0, w.raw_rows));
    let logits = gather(&|w| w.graph.value(w.out.logits).slice_rows(0, w.raw_rows));
    let mixed_logits = gather(&|w| w.graph.value(w.out.logits).slice_rows(w.raw_rows, 2 * w.raw_rows));
    let labels: Vec<usize> = mixed.iter().flat_map(|b| b.raw.iter().map(label_of)).collect();
    let soft: Vec<[f64; 2]> = mixed.iter().flat_map(|b| b.mixed.iter().map(|s| s.label)).collect();

    let (report, grads) = total_loss(&BatchEmbedding { z, logits, labels }, &mixed_logits, &soft, settings.loss)?;
    let diverged = |what: &str| Error::TrainingDiverged {
        epoch: seed_tuple.epoch as usize,
        step: seed_tuple.step as usize,
        diagnostics: format!(
            "{what}; l_con={} l_mix={} l_clf={} lr={lr} max|logit|={}",
            report.l_con,
            report.l_mix,
            report.l_clf,
            mixed_logits.data().iter().chain(grads.logits_raw.data()).fold(0.0f64, |a, v| a.max(v.abs()))
        ),
    };
    if !report.l_total.is_finite() {
        return Err(diverged("non-finite loss"));
    }

    let w = workers as f64;
    let per_worker: Vec<Vec<(String, Tensor)>> = std::thread::scope(|s| {
        let handles: Vec<_> = forwards
            .iter()
            .enumerate()
            .map(|(rank, f)| {
                let grads = &grads;
                s.spawn(move || {
                    let (n, start) = (f.raw_rows, rank * f.raw_rows);
                    let z_seed = seed_rows(&grads.z, start, n, w, 2 * n, 0);
                    let mut logit_seed = seed_rows(&grads.logits_raw, start, n, w, 2 * n, 0);
                    logit_seed.add_assign(&seed_rows(&grads.logits_mixed, start, n, w, 2 * n, n));
                    f.graph.backward(&[(f.out.z, z_seed), (f.out.logits, logit_seed)]).named(&f.graph)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut averaged = per_worker.into_iter();
    let mut total = averaged.next().expect("at least one worker");
    for other in averaged {
        for ((name, acc), (other_name, g)) in total.iter_mut().zip(other) {
            debug_assert_eq!(name, &other_name);
            acc.add_assign(&g);
        }
    }
    let mut sq = 0.0;
    for (_, g) in total.iter_mut() {
        g.scale(1.0 / w);
        sq += g.data().iter().map(|v| v * v).sum::<f64>();
    }
    if !sq.is_finite() {
        return Err(diverged("non-finite gradient"));
    }
    adam.update(&mut model.params, &total, lr, settings.train);
    Ok(StepReport { loss: report, forwarded_per_worker: 2 * mixed[0].raw.len(), grad_norm: sq.sqrt() })
}
