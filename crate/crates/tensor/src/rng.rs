// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counter-based random streams.
//!
//! A [`RngStream`] is a `(seed, stream)` pair naming a ChaCha8 keystream.
//! Streams are stateless values: deriving a child stream never advances the
//! parent, so substreams can be handed to parallel workers in any order and
//! still produce the same samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Generator algorithm identifier recorded alongside seeds in artifacts.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Child stream indexed by `index`.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5151))),
        }
    }

    /// Child stream named by a label, e.g. `"corpus"` or `"noise"`.
    pub fn named(&self, label: &str) -> Self {
        // FNV-1a over the label, then mixed like an index.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.substream(h)
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_stream_same_samples() {
        let s = RngStream::new(42).named("noise").substream(3);
        assert_eq!(s.normals(16), s.normals(16));
    }

    #[test]
    fn children_differ() {
        let root = RngStream::new(42);
        let a: u64 = root.substream(0).rng().random();
        let b: u64 = root.substream(1).rng().random();
        let c: u64 = root.named("corpus").rng().random();
        assert!(a != b && b != c && a != c);
    }

    #[test]
    fn pinned_first_draw() {
        // Guards cross-platform reproducibility of the keystream.
        let first: u64 = RngStream::new(0).rng().random();
        let again: u64 = ChaCha8Rng::seed_from_u64(0).random();
        assert_eq!(first, again);
    }
}
