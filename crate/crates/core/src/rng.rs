//! Seeded, stream-keyed RNG helpers.
//!
//! Everything random in this crate flows through ChaCha8, a counter-based
//! stream cipher with a documented value-stable output, keyed by a 64-bit
//! seed plus a stream id. Distinct subsystems derive their seeds with [`mix`]
//! and a fixed tag so streams never collide.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed tags for deriving per-subsystem seeds. Values are arbitrary but
/// frozen: changing one changes every downstream result.
pub mod tags {
    pub const INIT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const BLOBS: u64 = 0x03;
    pub const DIGITS: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const RELABEL: u64 = 0x06;
    pub const INVERT: u64 = 0x07;
    pub const SHADOW_SPLIT: u64 = 0x08;
    pub const SHADOW_TRAIN: u64 = 0x09;
    pub const ATTACK: u64 = 0x0a;
    pub const SWEEP: u64 = 0x0b;
    pub const ORACLE: u64 = 0x0c;
    pub const PROBE: u64 = 0x0d;
}

/// SplitMix64-style seed derivation: deterministic, well-mixed, cheap.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG from a bare seed (stream 0).
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG keyed by (seed, stream). Same seed with different streams yields
/// independent, reproducible sequences.
pub fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn keyed_streams_are_reproducible_and_independent() {
        let a: f32 = keyed(7, 1).gen();
        let b: f32 = keyed(7, 1).gen();
        let c: f32 = keyed(7, 2).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mix_spreads_tags() {
        assert_ne!(mix(0, tags::INIT), mix(0, tags::SHUFFLE));
        assert_ne!(mix(1, tags::INIT), mix(2, tags::INIT));
    }
}
