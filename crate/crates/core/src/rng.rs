//! Deterministic, explicitly-passed random streams.
//!
//! Every random draw in the crate comes from an [`RngStream`]: a user seed
//! plus a [`StreamId`] naming what the draws are for. Two streams with the
//! same seed and id produce identical sequences regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for. Part of the stream identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Mask,
    Folds,
    Fit,
    JointFit,
    LatentParams,
    EdgeSample,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Mask => 1,
            Purpose::Folds => 2,
            Purpose::Fit => 3,
            Purpose::JointFit => 4,
            Purpose::LatentParams => 5,
            Purpose::EdgeSample => 6,
            Purpose::Test => 7,
        }
    }
}

/// Sentinel used for "not applicable" coordinates (e.g. the full-data fold).
pub const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub purpose: Purpose,
    pub layer: u32,
    pub dim: u32,
    pub fold: u32,
    pub replicate: u32,
}

impl StreamId {
    pub fn new(purpose: Purpose) -> Self {
        StreamId {
            purpose,
            layer: NONE,
            dim: NONE,
            fold: NONE,
            replicate: 0,
        }
    }

    pub fn layer(mut self, layer: usize) -> Self {
        self.layer = layer as u32;
        self
    }

    pub fn dim(mut self, dim: usize) -> Self {
        self.dim = dim as u32;
        self
    }

    pub fn fold(mut self, fold: Option<usize>) -> Self {
        self.fold = fold.map_or(NONE, |k| k as u32);
        self
    }

    pub fn replicate(mut self, replicate: u32) -> Self {
        self.replicate = replicate;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub id: StreamId,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        RngStream { seed, id }
    }

    /// Same seed, different stream.
    pub fn derive(&self, id: StreamId) -> Self {
        RngStream { seed: self.seed, id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed ^ 0x5452_414e_5346_4552;
        let words = [
            self.id.purpose.tag(),
            self.id.layer as u64,
            self.id.dim as u64,
            self.id.fold as u64,
            self.id.replicate as u64,
        ];
        let mut key = [0u8; 32];
        for (chunk_idx, chunk) in key.chunks_mut(8).enumerate() {
            for w in words {
                state = splitmix64(state ^ w.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            }
            state = splitmix64(state.wrapping_add(chunk_idx as u64));
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
