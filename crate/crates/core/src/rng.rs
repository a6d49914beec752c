//! Deterministic random substreams.
//!
//! Every Monte Carlo loop is cut into fixed-size chunks. Chunk `k` of cell `c`
//! in domain `d` draws from its own ChaCha stream selected by
//! `(d, c, k)`, so the values produced do not depend on how chunks are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Number of draws per substream chunk.
pub const CHUNK: usize = 8192;

/// Top-level consumers of randomness. Each gets a disjoint stream space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Reliability = 1,
    FailureCost = 2,
    ScenarioRisk = 3,
    Vopi = 4,
    Dataset = 5,
    Training = 6,
}

/// Identifies one substream: domain, cell (scenario, class row, ...) and chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId {
    pub domain: Domain,
    pub cell: u32,
    pub chunk: u32,
}

impl StreamId {
    pub fn new(domain: Domain, cell: u32, chunk: u32) -> Self {
        Self {
            domain,
            cell,
            chunk,
        }
    }

    fn word(self) -> u64 {
        ((self.domain as u64) << 56) | ((u64::from(self.cell) & 0x00ff_ffff) << 32) | u64::from(self.chunk)
    }
}

/// RNG for the given substream of `seed`.
pub fn substream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.word());
    rng
}

/// Sizes of the chunks covering `n` draws.
pub fn chunk_lengths(n: usize) -> impl Iterator<Item = usize> + Clone {
    let full = n / CHUNK;
    let rest = n % CHUNK;
    std::iter::repeat_n(CHUNK, full).chain((rest > 0).then_some(rest))
}

/// Runs `f(rng, len)` once per chunk, in parallel, returning results in chunk
/// order.
pub fn par_chunks<T, F>(seed: u64, domain: Domain, cell: u32, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
{
    let lengths: Vec<usize> = chunk_lengths(n).collect();
    lengths
        .into_par_iter()
        .enumerate()
        .map(|(k, len)| {
            let mut rng = substream(seed, StreamId::new(domain, cell, k as u32));
            f(&mut rng, len)
        })
        .collect()
}
