//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`SeededRng`], a thin wrapper
//! over ChaCha8. ChaCha is a counter-based stream cipher whose output is
//! fixed by its 256-bit key, so a given seed yields the same stream on every
//! platform. The 64-bit seed is expanded to a key with `seed_from_u64`
//! (PCG32 expansion, value-stable across `rand_core` releases).
//!
//! Index selection is integer-only: [`SeededRng::below`] uses Lemire's
//! widening-multiply rejection method on raw `u64` outputs, and weighted
//! choices compare a 53-bit integer draw against precomputed integer
//! thresholds. Floating-point draws are used only for noise synthesis.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Mixes a base seed with a stream index (`base ^ index`), then scrambles it
/// so that neighbouring indices land on unrelated keys.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire: reject the low part that would bias the high word.
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn below_usize(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    /// Uniform 53-bit integer, the unit used by [`WeightedIndex`].
    pub fn next_u53(&mut self) -> u64 {
        self.next_u64() >> 11
    }

    pub fn uniform_f64(&mut self) -> f64 {
        self.next_u53() as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

/// Categorical sampler with integer cumulative thresholds on a 2^53 grid.
///
/// Categories with zero weight get an empty interval and are never drawn.
#[derive(Debug, Clone)]
pub struct WeightedIndex {
    upper: Vec<u64>,
}

const GRID: u64 = 1 << 53;

impl WeightedIndex {
    /// `weights` must be non-negative with a positive sum.
    pub fn new(weights: &[f64]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || total.is_nan() || total <= 0.0 || weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return None;
        }
        let mut upper = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            acc += w;
            let t = if w == 0.0 {
                upper.last().copied().unwrap_or(0)
            } else {
                ((acc / total) * GRID as f64).round().min(GRID as f64) as u64
            };
            upper.push(t);
        }
        // The last positive-weight category closes the interval.
        if let Some(last) = weights.iter().rposition(|w| *w > 0.0) {
            for u in &mut upper[last..] {
                *u = GRID;
            }
        }
        Some(Self { upper })
    }

    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let x = rng.next_u53();
        self.upper.partition_point(|&u| u <= x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SeededRng::new(7);
        for n in 1..50u64 {
            for _ in 0..20 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn zero_weight_never_drawn() {
        let w = WeightedIndex::new(&[0.0, 0.3, 0.0, 0.7, 0.0]).unwrap();
        let mut rng = SeededRng::new(3);
        for _ in 0..10_000 {
            let i = w.sample(&mut rng);
            assert!(i == 1 || i == 3, "drew {i}");
        }
    }

    #[test]
    fn rejects_degenerate_weights() {
        assert!(WeightedIndex::new(&[]).is_none());
        assert!(WeightedIndex::new(&[0.0, 0.0]).is_none());
        assert!(WeightedIndex::new(&[1.0, f64::NAN]).is_none());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }
}
