use std::sync::{Barrier, Mutex};

use super::wire::{decode_worker_message, encode_worker_message, WorkerMessage};
use super::{apply_mix, sample_decision, MixConfig, MixedBatch, Sample, SeedTuple};
use crate::error::{Error, Result};

/// How worker contributions travel through the all-gather.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Shared memory between threads.
    InMemory,
    /// Checksummed byte messages, as a process boundary would carry them.
    Wire,
}

/// One worker's local raw samples for the current step.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerBatch {
    pub rank: usize,
    pub seed_tuple: SeedTuple,
    pub samples: Vec<Sample>,
}

enum Slot {
    Empty,
    Shared(WorkerBatch),
    Bytes(Vec<u8>),
}

fn receive(slot: &Slot) -> Result<WorkerBatch> {
    match slot {
        Slot::Empty => Err(Error::Protocol("a worker did not publish its batch".into())),
        Slot::Shared(b) => Ok(b.clone()),
        Slot::Bytes(bytes) => {
            let m = decode_worker_message(bytes)?;
            Ok(WorkerBatch { rank: m.rank as usize, seed_tuple: m.seed_tuple, samples: m.samples })
        }
    }
}

/// Rank-ordered concatenation after checking the protocol preconditions.
fn assemble(gathered: &[WorkerBatch]) -> Result<(Vec<Sample>, SeedTuple, usize)> {
    let first = &gathered[0];
    for (rank, b) in gathered.iter().enumerate() {
        if b.rank != rank {
            return Err(Error::Protocol(format!("slot {rank} holds a batch from rank {}", b.rank)));
        }
        if b.samples.len() != first.samples.len() {
            return Err(Error::Protocol(format!(
                "rank {rank} has local batch {} but rank 0 has {}",
                b.samples.len(),
                first.samples.len()
            )));
        }
        if b.seed_tuple != first.seed_tuple {
            return Err(Error::Protocol(format!(
                "rank {rank} seed tuple {:?} diverges from rank 0 {:?}",
                b.seed_tuple, first.seed_tuple
            )));
        }
    }
    let samples = gathered.iter().flat_map(|b| b.samples.iter().cloned()).collect();
    Ok((samples, first.seed_tuple, first.samples.len()))
}

fn mix_gathered(gathered: &[WorkerBatch], rank: usize, cfg: &MixConfig) -> Result<MixedBatch> {
    let (samples, seed_tuple, local) = assemble(gathered)?;
    let dim = samples.first().ok_or_else(|| Error::Protocol("empty gathered batch".into()))?.voxels.dim();
    let decision = sample_decision(cfg.mode, samples.len(), seed_tuple, cfg.alpha, [dim.0, dim.1, dim.2])?;
    let mut all = apply_mix(&samples, &decision)?;
    let range = rank * local..(rank + 1) * local;
    Ok(MixedBatch { raw: all.raw.drain(range.clone()).collect(), mixed: all.mixed.drain(range).collect() })
}

/// Each worker publishes its batch, waits at a barrier, gathers every
/// batch in rank order, runs the same pure mixing function on the
/// concatenation and keeps its own positions. Output `i` belongs to rank `i`.
pub fn gather_dispatch(batches: Vec<WorkerBatch>, cfg: &MixConfig, transport: Transport) -> Result<Vec<MixedBatch>> {
    let workers = batches.len();
    if workers == 0 {
        return Err(Error::Protocol("gather over zero workers".into()));
    }
    let slots: Vec<Mutex<Slot>> = (0..workers).map(|_| Mutex::new(Slot::Empty)).collect();
    let barrier = Barrier::new(workers);

    let results: Vec<Result<MixedBatch>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batches
            .into_iter()
            .enumerate()
            .map(|(rank, batch)| {
                let (slots, barrier) = (&slots, &barrier);
                scope.spawn(move || {
                    let slot = match transport {
                        Transport::InMemory => Slot::Shared(batch),
                        Transport::Wire => Slot::Bytes(encode_worker_message(&WorkerMessage {
                            rank: batch.rank as u32,
                            seed_tuple: batch.seed_tuple,
                            samples: batch.samples,
                        })),
                    };
                    *slots[rank].lock().expect("slot lock") = slot;
                    barrier.wait();
                    let gathered = slots
                        .iter()
                        .map(|s| receive(&s.lock().expect("slot lock")))
                        .collect::<Result<Vec<_>>>()?;
                    mix_gathered(&gathered, rank, cfg)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn batch(rank: usize, n: usize, seed: SeedTuple) -> WorkerBatch {
        let samples = (0..n)
            .map(|i| Sample::one_hot(Array3::from_elem((2, 2, 2), (rank * n + i) as f32 / 8.0), (rank + i) % 2))
            .collect();
        WorkerBatch { rank, seed_tuple: seed, samples }
    }

    #[test]
    fn unequal_sizes_and_seeds_are_rejected() {
        let s = SeedTuple::new(1, 0, 0);
        let cfg = MixConfig::default();
        for t in [Transport::InMemory, Transport::Wire] {
            let r = gather_dispatch(vec![batch(0, 1, s), batch(1, 2, s)], &cfg, t);
            assert!(matches!(r, Err(Error::Protocol(_))));
            let r = gather_dispatch(vec![batch(0, 1, s), batch(1, 1, SeedTuple::new(1, 0, 1))], &cfg, t);
            assert!(matches!(r, Err(Error::Protocol(_))));
        }
    }

    #[test]
    fn workers_receive_their_own_positions() {
        let s = SeedTuple::new(4, 1, 2);
        let out = gather_dispatch((0..4).map(|r| batch(r, 1, s)).collect(), &MixConfig::default(), Transport::InMemory)
            .unwrap();
        for (rank, b) in out.iter().enumerate() {
            assert_eq!(b.raw, batch(rank, 1, s).samples);
            assert_eq!(b.mixed.len(), 1);
        }
    }
}
