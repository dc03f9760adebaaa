//! Seed discipline.
//!
//! Every run is reproduced from one 64-bit master seed. The master seed
//! initialises a xoshiro256++ generator (via SplitMix64); each stream domain
//! is reached with `k` long jumps (2^192 steps each), and individual chains
//! inside a domain are separated by jumps of 2^128 steps. Streams therefore
//! never overlap for any realistic run length.

use rand::{Rng, SeedableRng};
pub use rand_xoshiro::Xoshiro256PlusPlus as Prng;

/// Independent consumers of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum StreamDomain {
    /// Free-running chains that generate visible samples during training.
    OuterChain = 0,
    /// Clamped auxiliary chains, one per outer-sample slot.
    InnerChains = 1,
    /// Free-running chain of the final evaluation.
    EvalOuter = 2,
    /// Clamped chains of the final evaluation.
    EvalInner = 3,
    /// Parameter initialisation.
    Init = 4,
    /// Graph partitioner tie-breaking.
    Partition = 5,
    /// Per-partition chains of the cluster simulator.
    PartitionChains = 6,
}

/// Hands out non-overlapping generator substreams in a fixed order.
#[derive(Debug, Clone)]
pub struct StreamFactory {
    next: Prng,
}

impl StreamFactory {
    pub fn new(seed: u64, domain: StreamDomain) -> Self {
        let mut base = Prng::seed_from_u64(seed);
        for _ in 0..domain as u32 {
            base.long_jump();
        }
        Self { next: base }
    }

    /// Returns the current substream and advances by one jump.
    pub fn next_stream(&mut self) -> Prng {
        let stream = self.next.clone();
        self.next.jump();
        stream
    }

    pub fn streams(&mut self, count: usize) -> Vec<Prng> {
        (0..count).map(|_| self.next_stream()).collect()
    }
}

/// Uniform variate on `[-1, 1)` with 53 random bits.
#[inline]
pub fn uniform_pm1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    2.0 * rng.random::<f64>() - 1.0
}
