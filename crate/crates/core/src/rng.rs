//! Deterministic stream derivation from one master seed.
//!
//! A run owns a single 64-bit master seed. Every source of randomness
//! (scheme index sampling, per-block particle noise, data generation,
//! diagnostics resampling) draws from its own ChaCha8 stream whose seed is
//! derived by iterating splitmix64. The derivation is part of the public
//! contract so other implementations can reproduce runs bit-for-bit:
//!
//! ```text
//! state_0 = master_seed
//! state_{i+1} = state_i + 0x9E3779B97F4A7C15            (wrapping)
//! out(s)  = let z = s;
//!           z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9    (wrapping)
//!           z = (z ^ (z >> 27)) * 0x94D049BB133111EB    (wrapping)
//!           z ^ (z >> 31)
//! stream_seed(master, idx) = out(state_{idx+1})
//! ```
//!
//! Stream indices: 0 scheme, 1 data generation, 2 objective/diagnostics,
//! 3 OT subsampling, 4 reference construction, 16 + j for block j.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SCHEME: u64 = 0;
pub const STREAM_DATA: u64 = 1;
pub const STREAM_DIAGNOSTICS: u64 = 2;
pub const STREAM_OT_SUBSAMPLE: u64 = 3;
pub const STREAM_REFERENCE: u64 = 4;
pub const STREAM_BLOCK_BASE: u64 = 16;

#[inline]
fn splitmix64_out(state: u64) -> u64 {
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of derived stream `idx` for a given master seed.
pub fn stream_seed(master: u64, idx: u64) -> u64 {
    let state = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(idx.wrapping_add(1)));
    splitmix64_out(state)
}

/// ChaCha8 stream `idx` derived from `master`.
pub fn stream(master: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, idx))
}

/// Stream for block `j`'s particle noise and solver randomness.
pub fn block_stream(master: u64, block: usize) -> ChaCha8Rng {
    stream(master, STREAM_BLOCK_BASE + block as u64)
}

/// Sub-seed for per-iteration deterministic draws (e.g. objective matchings).
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64_out(seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
