//! Counter-based random streams.
//!
//! Every random quantity in a simulation is drawn from its own ChaCha8 stream whose key
//! is a hash of `(seed, step, channel, i, j)`. Draws therefore never depend on the order
//! in which agents, edges or paths are processed, nor on how many threads run them.
//!
//! Monte Carlo path `p` runs with seed [`path_seed`]`(master_seed, p)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream families. The discriminant is part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Channel {
    Graph = 1,
    Gradient = 2,
    Resource = 3,
    /// ζ_ij: noise on the received multiplier.
    Lambda = 4,
    /// ε_ij: noise on the received auxiliary variable.
    Auxiliary = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(state: u64, word: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN) ^ mix64(word.wrapping_add(GOLDEN)))
}

/// Seed of Monte Carlo path `path` under `master_seed`.
pub fn path_seed(master_seed: u64, path: u64) -> u64 {
    absorb(absorb(0x5041_5448, master_seed), path)
}

/// Seed of an independent sub-experiment (round, pool, instance) under `master_seed`.
pub fn sub_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    let tag = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    absorb(absorb(absorb(0x5355_4253, master_seed), tag), index)
}

/// The stream for one `(seed, step, channel, i, j)` key.
pub fn stream(seed: u64, step: u64, channel: Channel, i: u64, j: u64) -> ChaCha8Rng {
    let mut h = absorb(0x5354_524d, seed);
    h = absorb(h, step);
    h = absorb(h, channel as u64);
    h = absorb(h, i);
    h = absorb(h, j);
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_mut(8) {
        s = mix64(s.wrapping_add(GOLDEN));
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Streams for a single synchronous round of one path.
#[derive(Clone, Copy, Debug)]
pub struct StepStreams {
    pub seed: u64,
    pub step: u64,
}

impl StepStreams {
    pub fn new(seed: u64, step: u64) -> Self {
        Self { seed, step }
    }

    pub fn rng(&self, channel: Channel, i: usize, j: usize) -> ChaCha8Rng {
        stream(self.seed, self.step, channel, i as u64, j as u64)
    }
}
