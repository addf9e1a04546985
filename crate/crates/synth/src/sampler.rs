//! Portable sampling on top of ChaCha8.
//!
//! The stream is `ChaCha8Rng::seed_from_u64(seed)`. Every variate is derived
//! from `next_u64` with fixed arithmetic: a unit draw is the top 53 bits
//! scaled by 2^-53, an index below `n` is `floor(unit * n)`, and Pareto draws
//! use the inverse CDF `(1 - u)^(-1/alpha)`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct Sampler(ChaCha8Rng);

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        ((self.unit() * n as f64) as usize).min(n - 1)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn pareto(&mut self, alpha: f64) -> f64 {
        (1.0 - self.unit()).powf(-1.0 / alpha)
    }

    pub fn hex(&mut self, bytes: usize) -> String {
        let mut out = String::with_capacity(2 + 2 * bytes);
        out.push_str("0x");
        for _ in 0..bytes {
            out.push_str(&format!("{:02x}", self.0.next_u64() & 0xff));
        }
        out
    }

    /// Fisher-Yates from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices below `n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for j in 0..k {
            let r = j + self.below(n - j);
            pool.swap(j, r);
        }
        pool.truncate(k);
        pool
    }
}
