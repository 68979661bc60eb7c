//! Deterministic, splittable random streams.
//!
//! A stream is a ChaCha8 keystream keyed by the master seed and addressed by
//! a 64-bit stream index, so replica `i` always sees the same numbers no
//! matter which worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        RngStream { seed, index }
    }

    pub fn rng(&self) -> StreamRng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.index);
        r
    }

    /// A sub-stream labelled `k`; distinct `(index, k)` give distinct indices
    /// with overwhelming probability.
    pub fn child(&self, k: u64) -> RngStream {
        RngStream { seed: self.seed, index: splitmix(self.index ^ splitmix(k.wrapping_add(0x9e37_79b9_7f4a_7c15))) }
    }

    /// Convenience: `child(a).child(b)`.
    pub fn child2(&self, a: u64, b: u64) -> RngStream {
        self.child(a).child(b)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_stream_same_sequence() {
        let a: Vec<u64> = (0..8).map({ let mut r = RngStream::new(7, 3).rng(); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = RngStream::new(7, 3).rng(); move |_| r.random() }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_streams_differ() {
        let mut a = RngStream::new(7, 3).rng();
        let mut b = RngStream::new(7, 4).rng();
        let x: u64 = a.random();
        let y: u64 = b.random();
        assert_ne!(x, y);
        assert_ne!(RngStream::new(1, 0).child(1), RngStream::new(1, 0).child(2));
    }
}
