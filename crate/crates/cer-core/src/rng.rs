//! Seeded randomness. One ChaCha stream per consumer: the training loop owns
//! one, dataset shuffling owns another, so interleaving never shifts draws.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::fmath;

/// Deterministic random source. Identical seeds produce identical draw
/// sequences on every platform.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derive an independent stream, e.g. one per epoch.
    pub fn derive(&self, salt: u64) -> Self {
        let mut base = self.0.clone();
        let mixed = base.next_u64() ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Rng(ChaCha8Rng::seed_from_u64(mixed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Normal with the given std, resampled until within two stds of zero.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let x = self.normal() * std;
            if fmath::abs(x) <= 2.0 * std {
                return x;
            }
        }
    }

    /// Unbiased integer in `[0, n)`.
    pub fn gen_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        loop {
            let x = self.0.next_u64();
            let r = x % n;
            // Reject draws from the final partial block to stay unbiased.
            if x - r <= u64::MAX - (n - 1) {
                return r as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        let n = slice.len();
        for i in (1..n).rev() {
            let j = self.gen_range(i + 1);
            slice.swap(i, j);
        }
    }
}
