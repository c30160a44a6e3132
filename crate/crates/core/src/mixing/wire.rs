//! Byte encoding of one worker's contribution to a gather.
//!
//! Layout (little endian): `b"CMCW"`, version `u8`, rank `u32`, seed tuple
//! `3 x u64`, sample count `u32`, then per sample the shape `3 x u32`, the
//! label `2 x f64` and the voxels as `f32`; a CRC-32 of everything before
//! it closes the message.

use ndarray::Array3;

use super::{Sample, SeedTuple};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CMCW";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerMessage {
    pub rank: u32,
    pub seed_tuple: SeedTuple,
    pub samples: Vec<Sample>,
}

pub fn encode_worker_message(msg: &WorkerMessage) -> Vec<u8> {
    let voxel_bytes: usize = msg.samples.iter().map(|s| s.voxels.len() * 4 + 28).sum();
    let mut out = Vec::with_capacity(41 + voxel_bytes + 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&msg.rank.to_le_bytes());
    for v in [msg.seed_tuple.global_seed, msg.seed_tuple.epoch, msg.seed_tuple.step] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(msg.samples.len() as u32).to_le_bytes());
    for s in &msg.samples {
        let (t, h, w) = s.voxels.dim();
        for d in [t, h, w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for l in s.label {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for v in s.voxels.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Protocol(format!("worker message truncated: need {n} bytes, have {}", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn decode_worker_message(bytes: &[u8]) -> Result<WorkerMessage> {
    if bytes.len() < 4 {
        return Err(Error::Protocol("worker message shorter than its checksum".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let expected = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if expected != actual {
        return Err(Error::Protocol(format!("worker message checksum {actual:08x} != {expected:08x}")));
    }
    let mut r = Reader { buf: body };
    if r.take(4)? != MAGIC {
        return Err(Error::Protocol("bad worker message magic".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::Protocol(format!("unsupported worker message version {version}")));
    }
    let rank = r.u32()?;
    let seed_tuple = SeedTuple::new(r.u64()?, r.u64()?, r.u64()?);
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count.min(r.buf.len() / 28));
    for _ in 0..count {
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let label = [r.f64()?, r.f64()?];
        if !label.iter().all(|l| l.is_finite()) {
            return Err(Error::Protocol(format!("non-finite label {label:?}")));
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Protocol(format!("sample shape {dims:?} overflows")))?;
        let raw = r.take(len)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let voxels = Array3::from_shape_vec((dims[0], dims[1], dims[2]), data).expect("length matches shape");
        samples.push(Sample { voxels, label });
    }
    if !r.buf.is_empty() {
        return Err(Error::Protocol(format!("{} trailing bytes in worker message", r.buf.len())));
    }
    Ok(WorkerMessage { rank, seed_tuple, samples })
}
