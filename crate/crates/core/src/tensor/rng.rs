use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Zero-centred sampling distributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Gaussian { sigma: f64 },
    Laplacian { scale: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Gaussian { sigma } => sigma > 0.0 && sigma.is_finite(),
            Distribution::Laplacian { scale } => scale > 0.0 && scale.is_finite(),
            Distribution::Uniform { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDistribution(format!("{self:?}")))
        }
    }
}

/// Deterministic random stream. Same seed, same samples, on every platform.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream keyed by `(seed, stream)`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng(inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        Normal::new(0.0, sigma).expect("sigma > 0").sample(&mut self.0)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }

    pub fn sample(&mut self, dist: Distribution, shape: &[usize]) -> Result<Tensor> {
        dist.validate()?;
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match dist {
            Distribution::Gaussian { sigma } => {
                let d = Normal::new(0.0, sigma).expect("validated");
                (0..n).map(|_| d.sample(&mut self.0)).collect()
            }
            Distribution::Laplacian { scale } => (0..n)
                .map(|_| {
                    // Inverse CDF on u ∈ (-1/2, 1/2).
                    let u = self.uniform() - 0.5;
                    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                })
                .collect(),
            Distribution::Uniform { lo, hi } => {
                let d = Uniform::new(lo, hi).expect("validated");
                (0..n).map(|_| d.sample(&mut self.0)).collect()
            }
        };
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_mean_within_three_standard_errors() {
        let n = 100_000;
        let sigma = 0.02;
        let t = Rng::new(7)
            .sample(Distribution::Gaussian { sigma }, &[n])
            .unwrap();
        let mean = t.sum() / n as f64;
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn same_seed_same_tensor() {
        let d = Distribution::Laplacian { scale: 0.02 };
        let a = Rng::new(3).sample(d, &[4, 5]).unwrap();
        let b = Rng::new(3).sample(d, &[4, 5]).unwrap();
        assert_eq!(a, b);
        let c = Rng::new(4).sample(d, &[4, 5]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_unit_range() {
        let t = Rng::new(1)
            .sample(Distribution::Uniform { lo: 0.0, hi: 1.0 }, &[10_000])
            .unwrap();
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn laplacian_scale_matches_mean_absolute_deviation() {
        let n = 200_000;
        let t = Rng::new(11)
            .sample(Distribution::Laplacian { scale: 0.5 }, &[n])
            .unwrap();
        let mad = t.data().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        assert!((mad - 0.5).abs() < 0.01, "{mad}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut rng = Rng::new(0);
        assert!(rng.sample(Distribution::Gaussian { sigma: 0.0 }, &[2]).is_err());
        assert!(rng.sample(Distribution::Laplacian { scale: -1.0 }, &[2]).is_err());
        assert!(rng.sample(Distribution::Uniform { lo: 1.0, hi: 1.0 }, &[2]).is_err());
    }

    #[test]
    fn streams_are_independent() {
        let a = Rng::with_stream(5, 0).next_u64();
        let b = Rng::with_stream(5, 1).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, Rng::with_stream(5, 0).next_u64());
    }
}
