//! Counter-based random source.
//!
//! The generator is SplitMix64 used in counter mode: draw `i` of a stream is
//! `mix64(seed + i * GOLDEN_GAMMA)` where `i` starts at 1. Because every draw
//! is a pure function of `(seed, counter)`, two `RngState`s with equal fields
//! produce the same bits on every platform, and independent substreams can be
//! derived without touching the parent (see [`RngState::derive`]).
//!
//! Uniform doubles take the top 53 bits of a draw. Standard normals use the
//! Box-Muller cosine branch, consuming exactly two draws per value.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_GAMMA: u64 = 0xd1b5_4a32_d192_ed03;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

pub fn seeded_rng(seed: u64) -> RngState {
    RngState::new(seed)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift with rejection.
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Independent child stream keyed by `tag` and the parent's current
    /// position. The parent is not advanced.
    pub fn derive(&self, tag: u64) -> RngState {
        let key = mix64(self.counter ^ tag.wrapping_mul(STREAM_GAMMA));
        RngState {
            seed: mix64(self.seed ^ key).wrapping_add(tag),
            counter: 0,
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `n` i.i.d. standard-normal draws as a rank-1 tensor.
pub fn gaussian(rng: &mut RngState, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::EmptyRequest("gaussian draw of zero values"));
    }
    let data: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    Tensor::new(vec![n], data)
}
