//! Seed derivation for reproducible trials.
//!
//! Every trial owns one [`TrialRng`] stream. Trial seeds are derived from a
//! master seed with [`mix`], so the stream of trial `t` at sweep point `p`
//! never depends on how many other points or trials exist, nor on the order
//! in which worker threads pick them up.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used by a single trial.
pub type TrialRng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with two indices.
///
/// `mix(s, a, b) = splitmix64(splitmix64(splitmix64(s) ^ a) ^ b)`. Each index
/// passes through a full avalanche round, so neighbouring indices give
/// unrelated seeds.
pub fn mix(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ a) ^ b)
}

/// Seed of trial `trial` at sweep point `point`.
pub fn trial_seed(master: u64, point: u64, trial: u64) -> u64 {
    mix(master, point, trial)
}

/// Independent sub-streams of one trial (topology, initial values, protocol).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Topology = 1,
    Assignment = 2,
    Protocol = 3,
}

pub fn stream(seed: u64, which: Stream) -> TrialRng {
    TrialRng::seed_from_u64(mix(seed, 0x5EED, which as u64))
}

pub fn trial_rng(seed: u64) -> TrialRng {
    TrialRng::seed_from_u64(seed)
}
