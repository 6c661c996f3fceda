//! Counter-based random streams.
//!
//! Every draw in an experiment is addressed by a tuple
//! `(master seed, path, agent, iteration, tag)`. The tuple is hashed into a
//! 64-bit key and the key drives a SplitMix64 sequence, so any single
//! `(path, agent, k)` draw can be regenerated in isolation and the order in
//! which paths or agents are evaluated has no effect on the numbers produced.

use rand::rand_core::impls;
use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function (Stafford variant 13).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes an ordered list of words into one key.
pub fn derive_key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c909, |acc, &p| {
        mix64(acc.wrapping_add(GOLDEN_GAMMA) ^ mix64(p.wrapping_add(GOLDEN_GAMMA)))
    })
}

/// Which oracle a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Computational = 1,
    Learning = 2,
    Dataset = 3,
    Validation = 4,
    PowerIteration = 5,
}

/// Seed for one Monte Carlo path.
pub fn path_seed(master_seed: u64, path: u64) -> u64 {
    derive_key(&[master_seed, path])
}

/// SplitMix64 generator keyed by a derived 64-bit value.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn from_key(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Stream for one agent at one iteration of one path.
    pub fn for_draw(path_seed: u64, agent: usize, iteration: usize, tag: StreamTag) -> Self {
        Self::from_key(derive_key(&[
            path_seed,
            agent as u64,
            iteration as u64,
            tag as u64,
        ]))
    }

    /// Number of 64-bit words consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
