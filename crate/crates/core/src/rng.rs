//! Seeded, stream-separated pseudo-random generators.
//!
//! Every consumer derives its generator from a `(seed, stream)` pair so that
//! adding a new consumer never perturbs the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids below this value are reserved for per-VM service-time streams.
pub const VM_STREAM_LIMIT: u64 = 1 << 48;
/// Stream used by the synthetic trace generator.
pub const TRACE_STREAM: u64 = VM_STREAM_LIMIT + 1;
/// Stream used by the synthetic latency-sample generator.
pub const SAMPLES_STREAM: u64 = VM_STREAM_LIMIT + 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
