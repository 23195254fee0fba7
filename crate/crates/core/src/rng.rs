//! Deterministic, splittable random number generation.
//!
//! The generator is ChaCha20 keyed by the 64-bit seed (little-endian in the
//! first eight key bytes, remaining key bytes zero) with the 64-bit stream id
//! selecting the ChaCha stream. Each stream yields 2^64 blocks, so distinct
//! stream ids never overlap. Child generators keep the seed and derive a new
//! stream id from the parent's id and a key, which lets per-sample draws be
//! keyed by (epoch, index, view) independently of scheduling.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream_id);
        Rng {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh generator on a stream derived from this one's id and `key`.
    /// Does not advance `self`.
    pub fn child(&self, key: u64) -> Rng {
        let stream = splitmix64(self.stream_id ^ splitmix64(key));
        Rng::new(self.seed, stream)
    }

    /// Child keyed by a path of integers, e.g. `[epoch, sample, view]`.
    pub fn child_path(&self, keys: &[u64]) -> Rng {
        keys.iter().fold(self.clone(), |r, &k| r.child(k))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `[0, n)`; `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates, from the last position down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_key_matches_chacha20_keystream() {
        // First keystream block of ChaCha20 under the all-zero key and nonce.
        let bytes = [
            0x76, 0xb8, 0xe0, 0xad, 0xa0, 0xf1, 0x3d, 0x90, 0x40, 0x5d, 0x6a, 0xe5, 0x53, 0x86, 0xbd, 0x28,
        ];
        let mut r = Rng::new(0, 0);
        assert_eq!(r.next_u64(), u64::from_le_bytes(bytes[..8].try_into().unwrap()));
        assert_eq!(r.next_u64(), u64::from_le_bytes(bytes[8..].try_into().unwrap()));
    }

    #[test]
    fn frozen_vectors() {
        let mut r = Rng::new(0, 0);
        r.next_u64();
        r.next_u64();
        assert_eq!(r.next_u64(), 0x1aed8da0b819d2bd);
        let mut r = Rng::new(42, 7);
        assert_eq!([r.next_u64(), r.next_u64()], [0xb513e58e333e87e7, 0x2d733d768ebfcc73]);
        assert_eq!(Rng::new(42, 7).child_path(&[3, 9]).next_u64(), 0xf5cdd99843d2c461);
        assert_eq!(Rng::new(1, 2).child(5).stream_id(), 2611768881034074630);
    }

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = Rng::new(5, 11);
        let mut b = Rng::new(5, 11);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = Rng::new(5, 0);
        let mut b = Rng::new(5, 1);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn child_does_not_advance_parent() {
        let parent = Rng::new(1, 2);
        let mut c1 = parent.child(7);
        let mut c2 = parent.child(7);
        assert_eq!(c1.next_u64(), c2.next_u64());
        assert_ne!(parent.child(7).stream_id(), parent.child(8).stream_id());
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = Rng::new(0, 0);
        for n in 1..50u64 {
            assert!(r.below(n) < n);
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = Rng::new(3, 3).permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
