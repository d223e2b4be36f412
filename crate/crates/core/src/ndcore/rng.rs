//! Keyed random streams.
//!
//! A stream is identified by `(seed, label, index)` and backed by ChaCha8, so
//! draws are identical on every platform and one consumer (say, mask
//! generation) never shifts the draws seen by another (weight init).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A ChaCha8 generator positioned at the start of one keyed stream.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rng {
    seed: u64,
}

impl Rng {
    pub const ALGORITHM: &'static str = "chacha8-keyed-v1";

    pub fn new(seed: u64) -> Self {
        Rng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, label: &str, index: u64) -> Stream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a64(label.as_bytes()).to_le_bytes());
        key[16..24].copy_from_slice(&index.to_le_bytes());
        key[24..].copy_from_slice(b"omnimae\0");
        ChaCha8Rng::from_seed(key)
    }

    /// A child generator whose seed is a pure function of `(seed, label, index)`.
    pub fn child(&self, label: &str, index: u64) -> Rng {
        Rng::new(mix64(self.seed ^ fnv1a64(label.as_bytes()), index))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer applied to `base + index·γ`. For a fixed base this is
/// a bijection in `index`, so distinct indices never collide.
pub fn mix64(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;

    #[test]
    fn identical_keys_identical_streams() {
        let a: Vec<u64> = {
            let mut s = Rng::new(7).stream("init", 3);
            (0..16).map(|_| s.next_u64()).collect()
        };
        let mut s = Rng::new(7).stream("init", 3);
        let b: Vec<u64> = (0..16).map(|_| s.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_independent_of_draw_order() {
        let r = Rng::new(11);
        let mut mask = r.stream("mask", 0);
        let first = mask.next_u64();
        // drawing heavily from another stream must not move "mask"
        let mut init = r.stream("init", 0);
        for _ in 0..1000 {
            init.next_u64();
        }
        assert_eq!(r.stream("mask", 0).next_u64(), first);
        assert_ne!(r.stream("mask", 1).next_u64(), first);
        assert_ne!(r.stream("masks", 0).next_u64(), first);
    }

    #[test]
    fn known_first_draw_is_stable() {
        // frozen so that an accidental change to key derivation is noticed
        let v = Rng::new(0).stream("", 0).next_u64();
        assert_eq!(v, 9_715_006_068_465_157_304);
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn mix64_is_injective_on_small_range() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000 {
            assert!(seen.insert(mix64(42, i)));
        }
    }
}
