//! Seedable, stream-splittable random number generation.
//!
//! Every Monte Carlo realization draws from its own ChaCha stream derived from
//! `(master seed, realization index)`, so realizations can be generated in any
//! order or in parallel and still be reproduced bit for bit.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{CMat, C64};

/// Counter-based generator bound to one realization stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    master: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(master: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master);
        inner.set_stream(stream);
        Self { master, stream, inner }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Circularly symmetric complex Gaussian with the given variance.
    pub fn complex_normal(&mut self, variance: f64) -> C64 {
        let s = (variance / 2.0).sqrt();
        let re: f64 = self.inner.sample(StandardNormal);
        let im: f64 = self.inner.sample(StandardNormal);
        C64::new(s * re, s * im)
    }

    /// Matrix with i.i.d. `CN(0, variance)` entries, filled row by row.
    pub fn complex_normal_matrix(&mut self, rows: usize, cols: usize, variance: f64) -> CMat {
        let mut m = CMat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.complex_normal(variance);
            }
        }
        m
    }

    /// Uniform draw from `{0, 1, ..., n - 1}`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
