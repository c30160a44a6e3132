//! Deterministic RNG streams keyed by tuples of integers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams derived from the same indices independent.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Sampler = 2,
    Augment = 3,
    Mix = 4,
    Phantom = 5,
    Split = 6,
    Tta = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha stream for `(stream, parts...)`. Distinct part lists give
/// independent streams; identical lists give identical streams.
pub fn rng_for(stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let mut h = splitmix64(stream as u64);
    for (i, &p) in parts.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(i as u64)));
    }
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        h = splitmix64(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = rng_for(Stream::Augment, &[1, 2, 3]).random();
        let b: u64 = rng_for(Stream::Augment, &[1, 2, 3]).random();
        let c: u64 = rng_for(Stream::Augment, &[1, 2, 4]).random();
        let d: u64 = rng_for(Stream::Mix, &[1, 2, 3]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
