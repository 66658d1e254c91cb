//! Portable seeded randomness for sampling and splitting.
//!
//! Every random draw in the crate goes through [`SampleRng`] so that samples
//! replicate across platforms and implementations:
//!
//! * generator: ChaCha with 20 rounds, 256-bit key = the 64-bit seed in
//!   little-endian order followed by 24 zero bytes, stream 0, counter 0;
//! * 64-bit outputs are the ChaCha keystream read as consecutive
//!   little-endian `u64` words;
//! * `below(n)` rejects outputs `x < (2^64 - n) mod n` and returns `x mod n`;
//! * `unit_f64()` is `(x >> 11) * 2^-53`.
//!
//! Sampling without replacement is a partial Fisher-Yates shuffle: for
//! `i in 0..k`, swap position `i` with `i + below(len - i)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct SampleRng {
    inner: ChaCha20Rng,
}

impl SampleRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Uniform float in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Moves a uniformly chosen `k`-subset to the front of `items`, in draw
    /// order, and returns that prefix.
    pub fn partial_shuffle<'a, T>(&mut self, items: &'a mut [T], k: usize) -> &'a mut [T] {
        let k = k.min(items.len());
        for i in 0..k {
            let j = i + self.below((items.len() - i) as u64) as usize;
            items.swap(i, j);
        }
        &mut items[..k]
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        self.partial_shuffle(items, n);
    }
}
