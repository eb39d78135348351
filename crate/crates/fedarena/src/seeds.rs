//! Seed fan-out: one master seed, many independent ChaCha20 streams.
//!
//! Every consumer of randomness gets its own stream keyed by a domain tag
//! plus up to two indices (participant, round). Streams never alias across
//! domains, so adding a draw in one place cannot shift any other.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::numkit::subseed;

pub const INIT: u64 = 1;
pub const TRAIN: u64 = 2;
pub const STANDALONE: u64 = 3;
pub const ADVERSARY: u64 = 4;
pub const SAMPLING: u64 = 5;
pub const EVAL: u64 = 6;
pub const SPLIT: u64 = 7;
pub const FINETUNE: u64 = 8;

pub fn stream(master: u64, tag: u64, a: u64, b: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(subseed(master, tag, a, b))
}
