//! Counter-based random streams.
//!
//! Every episode draws from its own ChaCha8 stream addressed by
//! `(master_seed, domain, index)`: the key comes from the master seed, the
//! 64-bit stream id from the domain, and the block counter starts at
//! `index << EPISODE_WORD_BITS`. Results therefore depend only on those three
//! numbers, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per episode (2^20 = 1M u32 draws).
const EPISODE_WORD_BITS: u32 = 20;

pub type EpisodeRng = ChaCha8Rng;

/// Stream domain used by plain estimation runs.
pub const ESTIMATION_DOMAIN: u64 = 0;

/// Stream domain for cross-entropy iteration `iteration`.
pub fn ce_domain(iteration: usize) -> u64 {
    1 + iteration as u64
}

/// Replication `r` of an experiment (used by test harnesses and repeated runs).
pub fn replication_seed(master_seed: u64, r: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(r.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn episode_rng(master_seed: u64, domain: u64, index: u64) -> EpisodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(domain);
    rng.set_word_pos((index as u128) << EPISODE_WORD_BITS);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
