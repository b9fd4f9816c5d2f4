//! Seeded random streams.
//!
//! Every consumer draws from a PCG-XSL-RR 128/64 generator (`Pcg64`) whose
//! state and increment are derived from `(seed, stream, index)` by SplitMix64
//! finalisers, so independent substreams never overlap in practice and the
//! output is identical on every platform.

use rand::{Rng, RngExt, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use rand_pcg::Pcg64;

/// Named substream families; a new purpose gets a new tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Data = 3,
    Check = 4,
    Probe = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct SeededRng(Pcg64);

impl SeededRng {
    pub fn new(seed: u64, stream: Stream, index: u64) -> Self {
        let a = splitmix(seed ^ splitmix(stream as u64));
        let b = splitmix(a ^ splitmix(index.wrapping_add(0x5851_f42d_4c95_7f2d)));
        let c = splitmix(b ^ 0x14057b7ef767814f);
        let d = splitmix(c);
        let state = ((a as u128) << 64) | b as u128;
        let inc = ((c as u128) << 64) | d as u128;
        SeededRng(Pcg64::new(state, inc))
    }

    /// Generator seeded from a single `u64`, for ad-hoc test streams.
    pub fn from_seed(seed: u64) -> Self {
        SeededRng(Pcg64::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.0.random_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std).expect("finite std").sample(&mut self.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}
