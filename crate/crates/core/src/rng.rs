//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(key, counter)`, so a path's normals do
//! not depend on which thread simulates it or in which order paths run.

use crate::special::normal_quantile;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: mix64(seed ^ GOLDEN),
        }
    }

    /// Independent sub-stream, e.g. one per path.
    pub fn stream(&self, index: u64) -> Self {
        CounterRng {
            key: mix64(self.key.wrapping_add(mix64(index.wrapping_add(1).wrapping_mul(GOLDEN)))),
        }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(mix64(counter.wrapping_add(1).wrapping_mul(GOLDEN))),
        )
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        normal_quantile(self.uniform(counter))
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn index(&self, counter: u64, n: usize) -> usize {
        ((self.bits(counter) as u128 * n as u128) >> 64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_the_counter() {
        let rng = CounterRng::new(7).stream(3);
        let a = rng.normal(11);
        let _ = rng.normal(12);
        assert_eq!(a.to_bits(), rng.normal(11).to_bits());
        assert_ne!(rng.bits(0), CounterRng::new(7).stream(4).bits(0));
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(1);
        let n = 200_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = rng.normal(i);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn index_is_in_range_and_covers() {
        let rng = CounterRng::new(99);
        let mut seen = [0usize; 3];
        for i in 0..3000 {
            seen[rng.index(i, 3)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 900));
    }
}
