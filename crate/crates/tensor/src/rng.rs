use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic, splittable random stream.
///
/// Every consumer gets its own child stream via [`SplitRng::split`], so adding
/// a draw in one place never shifts the sequence seen elsewhere. There is no
/// global RNG anywhere in the workspace.
#[derive(Debug, Clone)]
pub struct SplitRng(ChaCha8Rng);

impl SplitRng {
    pub fn seed(seed: u64) -> Self {
        SplitRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derive an independent child stream, advancing this one.
    pub fn split(&mut self) -> Self {
        SplitRng::seed(self.0.next_u64())
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    /// Uniform index in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }
}

impl RngCore for SplitRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}
