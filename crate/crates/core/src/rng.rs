//! Counter-based random streams.
//!
//! Every Monte Carlo path draws from its own ChaCha8 stream. The 256-bit key
//! is expanded from the master seed with a SplitMix64 mixer and the 64-bit
//! ChaCha stream id is the task id, so stream `i` of a run is a pure function
//! of `(master, i)`: results do not depend on how paths are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name recorded in run reports.
pub const GENERATOR_NAME: &str = "ChaCha8 (key = SplitMix64(master seed), stream = task id)";

pub type Stream = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed mix of two 64-bit words.
#[inline]
pub fn mix(key: u64, word: u64) -> u64 {
    splitmix64(key ^ splitmix64(word.wrapping_add(0x6a09_e667_f3bc_c909)))
}

/// Random stream for task `task_id` under master seed `master`.
pub fn seed_stream(master: u64, task_id: u64) -> Stream {
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix(master, i as u64).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(task_id);
    rng
}

/// A master seed together with a domain tag, so different operations inside
/// one run never share streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedDomain {
    master: u64,
}

impl SeedDomain {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Child domain for a named sub-computation.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            master: mix(self.master, tag),
        }
    }

    pub fn stream(&self, task_id: u64) -> Stream {
        seed_stream(self.master, task_id)
    }
}

/// Stable 64-bit tag for a string label.
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
