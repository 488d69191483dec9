//! Counter-based random streams.
//!
//! Every random draw is keyed by `(seed, purpose, indices…)`, so the value
//! seen for a given key never depends on which other draws happened. This
//! is what lets runs with different probe budgets share outcome
//! realizations round by round.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag separating independent substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Instance = 0x1001,
    Outcome = 0x2002,
    Modality = 0x3003,
    ProbeBaseline = 0x4004,
    HvMonteCarlo = 0x5005,
    MetricMonteCarlo = 0x6006,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed, a purpose tag and a tuple of indices into one 64-bit key.
pub fn key(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

/// A fresh generator for the given key tuple.
pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, purpose, indices))
}
