//! Seeded, keyed random streams.
//!
//! Every random draw in a fit is addressed by `(seed, purpose, a, b)`, e.g.
//! `(seed, LatentNoise, step, period)`. Streams are independent of evaluation
//! order, so parallel and sequential runs see identical noise.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    DataNoise = 2,
    LatentNoise = 3,
    Model = 4,
    Sample = 5,
    Switch = 6,
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    debug_assert!(a < (1 << 40) && b < (1 << 16));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (a << 16) | b);
    rng
}

pub fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}
