//! Seeded, named random streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

/// Stream ids for the named randomness sources of a run.
pub mod streams {
    pub const DATASET: u64 = 1;
    pub const SPHERE: u64 = 2;
    pub const WIENER: u64 = 3;
    pub const TARGETS: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const GRID: u64 = 7;
}

/// A reproducible random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream, e.g. one per trajectory.
    pub fn fork(&self, index: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))), self.stream)
    }

    pub fn uniform<T: Real>(&mut self, lo: T, hi: T) -> T {
        let u: f64 = self.rng.gen();
        lo + (hi - lo) * T::lit(u)
    }

    pub fn normal<T: Real>(&mut self) -> T {
        let z: f64 = self.rng.sample(StandardNormal);
        T::lit(z)
    }

    pub fn index(&mut self, upper: usize) -> usize {
        self.rng.gen_range(0..upper)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` points drawn uniformly from the unit sphere in `ℝⁿ` by normalizing
/// Gaussian vectors.
pub fn sample_unit_sphere<T: Real>(n: usize, count: usize, rng: &mut RngStream) -> Vec<Vec<T>> {
    assert!(n >= 1 && count >= 1, "sphere sampling needs n >= 1 and count >= 1");
    (0..count)
        .map(|_| loop {
            let g: Vec<f64> = (0..n).map(|_| rng.normal::<f64>()).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break g.iter().map(|v| T::lit(v / norm)).collect();
            }
        })
        .collect()
}
