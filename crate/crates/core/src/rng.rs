//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! pure function of a key path such as `(seed, episode, step, particle)`.
//! Results therefore do not depend on how work is scheduled across threads,
//! and a run can be resumed from nothing more than the global seed and the
//! episode counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams used for different purposes disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Prior = 1,
    EpisodeNoise = 2,
    Resample = 3,
    Chain = 4,
    Evaluation = 5,
    EnkfForecast = 6,
    EnkfAnalysis = 7,
    EnkfInit = 8,
    EnkfPredictive = 9,
    Test = 99,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64, domain: Domain) -> Self {
        StreamKey(splitmix64(splitmix64(seed) ^ (domain as u64)))
    }

    /// Derives a child key; `with(a).with(b)` differs from `with(b).with(a)`.
    pub fn with(self, component: u64) -> Self {
        StreamKey(splitmix64(self.0.rotate_left(17) ^ splitmix64(component)))
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}
