//! Seeded random streams.
//!
//! Every stochastic choice in the crate (wall phases, Glorot weights,
//! collocation points, mini-batch shuffles) draws from ChaCha20 keyed by a
//! 64-bit seed and a stream id, so results are bit-reproducible and adding
//! a consumer on one stream never shifts the draws seen by another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Stream ids used across the crate.
pub mod stream {
    pub const WALL_TOP: u64 = 0x746f_7000_0000_0000;
    pub const GLOROT: u64 = 0x676c_6f72_0000_0000;
    pub const COLLOCATION: u64 = 0x636f_6c6c_0000_0000;
    pub const DATASET: u64 = 0x6461_7461_0000_0000;
    pub const SHUFFLE: u64 = 0x7368_7566_0000_0000;
    pub const PROBE: u64 = 0x7072_6f62_0000_0000;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[0, 1)` with 53 bits of mantissa.
pub fn unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.random::<u64>() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Fisher-Yates with the crate's stream generator.
pub fn shuffle<T>(rng: &mut ChaCha20Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Zig-zag map so negative mode indices get distinct stream ids.
pub fn signed_stream(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}
