//! Reproducible random streams.
//!
//! A stream is the pair `(master_seed, stream_id)`. The generator is ChaCha8 keyed by
//! the master seed with `stream_id` selecting the ChaCha stream, so two streams never
//! share a keystream and generation is independent of call order or thread layout.
//! Child streams are derived by mixing a child index into the stream id.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GttaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    pub fn from_seed(master_seed: u64) -> Self {
        Self::new(master_seed, 0)
    }

    /// Child stream number `child` of this stream.
    pub fn derive(&self, child: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(child.wrapping_add(0x632B_E59B_D9B4_E019)));
        Self::new(self.master_seed, mixed)
    }

    /// Child stream keyed by a label, for separating unrelated consumers.
    pub fn derive_named(&self, label: &str) -> Self {
        let h = label
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3));
        self.derive(splitmix64(h))
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    pub fn gaussian(&self, n: usize, sigma: f64) -> Result<Vec<f64>> {
        gaussian(self, n, sigma)
    }

    /// Deterministic permutation of `0..n`.
    pub fn permutation(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng());
        idx
    }
}

/// `n` i.i.d. draws from N(0, sigma²), restarting the stream on every call.
pub fn gaussian(rng: &RngStream, n: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(GttaError::Param(format!("sigma must be a finite nonnegative number, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| GttaError::Param(e.to_string()))?;
    let mut r = rng.rng();
    Ok((0..n).map(|_| normal.sample(&mut r)).collect())
}

/// Standard normal draws, one per entry of `sigmas`, scaled by that entry.
pub fn gaussian_scaled(rng: &RngStream, sigmas: &[f64]) -> Vec<f64> {
    let mut r = rng.rng();
    sigmas
        .iter()
        .map(|&s| {
            let z: f64 = rand_distr::StandardNormal.sample(&mut r);
            z * s
        })
        .collect()
}
