//! Deterministic random streams.
//!
//! Everything stochastic in this crate draws from counter-based substreams
//! of one master seed: stream `i` is `ChaCha8` seeded with the master seed
//! and stream counter `i`. Substreams are statistically independent and can
//! be handed to parallel workers in any order without changing results, so
//! outputs are bit-exact across thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate.
pub type RandomStream = ChaCha8Rng;

/// Stream counters are partitioned by purpose so that independent uses of
/// the same master seed never collide: the low 32 bits index within a
/// purpose, the high bits select the purpose.
const PURPOSE_SHIFT: u32 = 32;

/// Map samples of a collection: one stream per sampled map.
pub(crate) const PURPOSE_MAP: u64 = 0;
/// Initial Gaussian-process seed point placement.
pub(crate) const PURPOSE_GP_INIT: u64 = 1;
/// Single Monte-Carlo logic query.
pub(crate) const PURPOSE_MC_QUERY: u64 = 2;
/// Per-node Monte-Carlo streams of a logic query field.
pub(crate) const PURPOSE_MC_FIELD: u64 = 3;

/// Substream `index` of `seed` for a given purpose.
pub(crate) fn substream_for(seed: u64, purpose: u64, index: u64) -> RandomStream {
    debug_assert!(index < 1 << PURPOSE_SHIFT);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << PURPOSE_SHIFT) | index);
    rng
}

/// Substream `index` of `seed` in the default (map sampling) partition.
pub fn substream(seed: u64, index: u64) -> RandomStream {
    substream_for(seed, PURPOSE_MAP, index)
}
