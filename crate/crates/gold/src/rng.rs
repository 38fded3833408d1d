//! Seeded noise sources for the stochastic parts of the model.
//!
//! Every sampling site takes a [`NoiseSource`] so tests can inject fixed
//! noise (or none) and training stays deterministic under a fixed seed.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub trait NoiseSource {
    /// i.i.d. standard normal draws.
    fn normal(&mut self, rows: usize, cols: usize) -> Array2<f64>;
    /// i.i.d. Gumbel(0, 1) draws.
    fn gumbel(&mut self, rows: usize, cols: usize) -> Array2<f64>;
}

/// ChaCha-backed noise; the workhorse for training and evaluation.
pub struct SeededNoise {
    rng: ChaCha8Rng,
}

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl NoiseSource for SeededNoise {
    fn normal(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut self.rng))
    }

    fn gumbel(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| {
            let u: f64 = self.rng.gen_range(f64::EPSILON..1.0);
            -(-u.ln()).ln()
        })
    }
}

/// All-zero noise: Gaussian samples collapse to their mean, Gumbel
/// perturbations vanish. Used for deterministic decoding and limit tests.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn normal(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::zeros((rows, cols))
    }

    fn gumbel(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::zeros((rows, cols))
    }
}

/// Replays a fixed queue of noise matrices in call order, for gradient
/// checks that need identical noise across repeated forward passes.
pub struct InjectedNoise {
    queue: VecDeque<Array2<f64>>,
}

impl InjectedNoise {
    pub fn new(mats: Vec<Array2<f64>>) -> Self {
        Self {
            queue: mats.into(),
        }
    }

    fn next(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let m = self
            .queue
            .pop_front()
            .expect("InjectedNoise queue exhausted");
        assert_eq!(m.dim(), (rows, cols), "injected noise shape mismatch");
        m
    }
}

impl NoiseSource for InjectedNoise {
    fn normal(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        self.next(rows, cols)
    }

    fn gumbel(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        self.next(rows, cols)
    }
}

/// Stable per-sample seed derivation so dataset generation is
/// order-independent (splitmix64 over the pair).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
