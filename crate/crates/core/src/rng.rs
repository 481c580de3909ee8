//! SplitMix64 generator with Box–Muller normals.
//!
//! Every random quantity in the pipeline (sensing matrices, weight init,
//! shuffling, synthetic clips) is drawn from this generator so that a seed
//! fully determines the result.

use std::f64::consts::PI;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed, seed }
    }

    /// Derive an independent stream, e.g. one per epoch or per clip.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut mixer = Rng::new(seed ^ stream.wrapping_mul(MIX_2));
        Rng::new(mixer.next_u64())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; bias is below 2^-64 * n.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fair coin from the top bit.
    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Standard normal via Box–Muller on two uniform draws; the sine half is discarded.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent reference: textbook SplitMix64 written out with u128 arithmetic.
    fn reference(seed: u64, n: usize) -> Vec<u64> {
        let m = 1u128 << 64;
        let mut s = seed as u128;
        (0..n)
            .map(|_| {
                s = (s + 0x9E3779B97F4A7C15) % m;
                let mut z = s;
                z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % m;
                z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % m;
                (z ^ (z >> 31)) as u64
            })
            .collect()
    }

    #[test]
    fn seed_zero_matches_reference() {
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(rng.next_u64(), 0x06c45d188009454f);
        for seed in [0u64, 1, 42, u64::MAX] {
            let mut rng = Rng::new(seed);
            let ours: Vec<u64> = (0..64).map(|_| rng.next_u64()).collect();
            assert_eq!(ours, reference(seed, 64));
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_differ() {
        assert_eq!(Rng::new(1).next_u64(), 0x910a2dec89025cc1);
        assert_eq!(Rng::new(2).next_u64(), 0x975835de1c9756ce);
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(2024);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.gaussian();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn gaussian_reproducible() {
        let a: Vec<f64> = {
            let mut r = Rng::new(5);
            (0..100).map(|_| r.gaussian()).collect()
        };
        let b: Vec<f64> = {
            let mut r = Rng::new(5);
            (0..100).map(|_| r.gaussian()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        Rng::new(3).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
