//! Deterministic stream derivation.
//!
//! Every random draw in a run comes from a [`Stream`] derived from the master
//! seed by a path of integer keys, so results never depend on scheduling or on
//! how many workers evaluate shots in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags used as the first key when forking a stream.
pub mod tag {
    pub const ITERATION: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const VALIDATION: u64 = 3;
    pub const SHOT: u64 = 4;
    pub const ENV: u64 = 5;
    pub const INIT: u64 = 6;
    pub const PROBE: u64 = 7;
    pub const LOOKAHEAD: u64 = 8;
    pub const EPISODE: u64 = 9;
    pub const EVAL: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the tree of derived random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stream(u64);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream(splitmix64(seed ^ 0x0005_EED0_FA11_u64))
    }

    pub fn child(self, key: u64) -> Self {
        Stream(splitmix64(self.0 ^ splitmix64(key.wrapping_add(0x1234_5678_9ABC_DEF1))))
    }

    pub fn path(self, keys: &[u64]) -> Self {
        keys.iter().fold(self, |s, &k| s.child(k))
    }

    pub fn key(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
