//! Deterministic random streams keyed by (master seed, replication, level).
//!
//! Every stream is derived from its key alone, never from the order in which
//! streams are created, so results do not depend on scheduling or thread count.

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct StreamRng(Xoshiro256PlusPlus);

impl StreamRng {
    pub fn from_seed_u64(seed: u64) -> Self {
        StreamRng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Root of the stream tree for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn replication(&self, replication: u64) -> ReplicationSeed {
        ReplicationSeed {
            key: splitmix64(
                splitmix64(self.master) ^ replication.wrapping_mul(0xD1B5_4A32_D192_ED03),
            ),
        }
    }
}

/// Streams belonging to one replication; each level gets its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReplicationSeed {
    key: u64,
}

impl ReplicationSeed {
    pub fn level(&self, level: u32) -> StreamRng {
        let seed =
            splitmix64(self.key ^ splitmix64(u64::from(level).wrapping_add(0xA076_1D64_78BD_642F)));
        StreamRng::from_seed_u64(seed)
    }

    /// Stream used by single-chain algorithms; identical to level 0.
    pub fn single(&self) -> StreamRng {
        self.level(0)
    }
}
