//! Deterministic seed derivation.
//!
//! Every random quantity in an experiment is drawn from a ChaCha stream keyed by
//! the master seed and a fixed stream id, so results never depend on the order
//! in which subsystems happen to consume randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the independent subsystems of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainingData = 1,
    WeightInit = 2,
    Policy = 3,
    Evaluation = 4,
    Baseline = 5,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    stream_rng(seed, stream as u64)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to mix seeds for sweep cells and evaluation frames.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
