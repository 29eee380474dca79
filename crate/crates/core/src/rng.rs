//! Seeded random streams.
//!
//! [`SeededRng`] is ChaCha8 keyed from a 64-bit seed. Uniform reals are built
//! from the top 53 bits of each 64-bit word and normals use Box-Muller with a
//! software `libm`, so a seed yields the same draws on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math;

/// Identifier recorded in logs next to every seed.
pub const ALGORITHM: &str = "chacha8-u53";

/// A source of uniform reals in the open interval (0, 1).
///
/// Everything that draws random parameters is generic over this trait so
/// tests can substitute a fixed stream.
pub trait UnitSource {
    fn next_unit(&mut self) -> f64;

    /// Draws consumed so far, recorded in replay logs; 0 if not tracked.
    fn position(&self) -> u64 {
        0
    }
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    draws: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed), draws: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words consumed so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_unit();
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent child stream, keyed by `tag`. Does not advance `self`.
    pub fn fork(&self, tag: u64) -> SeededRng {
        SeededRng::new(mix_seed(self.seed, tag))
    }
}

impl UnitSource for SeededRng {
    fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    fn position(&self) -> u64 {
        self.draws
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with a tag; used to derive per-run and per-purpose streams.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.rotate_left(17))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.position(), 100);
    }

    #[test]
    fn known_first_words() {
        // Pinned so an accidental generator change shows up as a test failure.
        let mut r = SeededRng::new(0);
        const PINNED: u64 = 13_080_132_717_333_068_652;
        assert_eq!(r.next_u64(), PINNED);
        assert_ne!(PINNED, SeededRng::new(1).next_u64());
    }

    #[test]
    fn open_unit_interval() {
        let mut r = SeededRng::new(3);
        for _ in 0..10_000 {
            let u = r.next_unit();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut r = SeededRng::new(11);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[r.below(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn normal_moments() {
        let mut r = SeededRng::new(5);
        let n = 200_000;
        let xs: alloc::vec::Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn fork_is_deterministic_and_distinct() {
        let r = SeededRng::new(9);
        assert_eq!(r.fork(1).next_u64(), r.fork(1).next_u64());
        assert_ne!(r.fork(1).next_u64(), r.fork(2).next_u64());
    }
}
