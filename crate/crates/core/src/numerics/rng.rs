use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};

/// Deterministic random stream: the same seed and call sequence always yield
/// the same values.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this seed and a stream label; does not
    /// advance `self`.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `k` distinct indices from `0..n`, uniformly without replacement.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }
}

/// I.i.d. normal draws with the given mean and standard deviation.
pub fn gaussian_sample(
    rng: &mut SeededRng,
    shape: &[usize],
    mean: f64,
    std: f64,
) -> Result<Tensor> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::contract(format!(
            "gaussian_sample needs finite mean and std >= 0, got mean {mean}, std {std}"
        )));
    }
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| mean + std * rng.normal()).collect();
    Tensor::new(shape.to_vec(), data)
}
