use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

/// The single PRNG every stage draws from: PCG-XSL-RR 128/64
/// (`rand_pcg::Pcg64`), seeded through `seed_from_u64`.
///
/// Stages never share a stream. Each one builds `SeededRng::new(seed)` and
/// takes sub-seeds with [`SeededRng::subseed`] in a fixed order.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Pcg64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Draws the next value and uses it as the seed of a fresh generator.
    pub fn subseed(&mut self) -> SeededRng {
        SeededRng::new(self.next_u64())
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.gen_range(0..n as u64) as usize
    }

    /// Fisher–Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_equal_streams() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(SeededRng::new(42).next_u64(), SeededRng::new(43).next_u64());
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first outputs for seed 42; a change here breaks every
        // recorded manifest.
        let mut rng = SeededRng::new(42);
        let got: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        let mut again = SeededRng::new(42);
        assert_eq!(got, (0..3).map(|_| again.next_u64()).collect::<Vec<_>>());
        assert_eq!(got, PINNED_SEED_42.to_vec());
    }

    const PINNED_SEED_42: [u64; 3] = [4178418447715145737, 4410739922618931473, 14034899209665866285];

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SeededRng::new(7);
        let mut p = rng.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
