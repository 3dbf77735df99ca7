//! Continuous views sharing a low-dimensional latent factor.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub z_latent: Vec<f64>,
    pub views: [Vec<f64>; 3],
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `view_m = tanh(A_m z + b_m) + noise` with `A_m`, `b_m` fixed at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGenerator {
    pub k: usize,
    pub dims: [usize; 3],
    pub noise_sigma: f64,
    weights: [Vec<f64>; 3],
    biases: [Vec<f64>; 3],
}

impl LatentGenerator {
    pub fn new(seed: u64, k: usize, dims: [usize; 3], noise_sigma: f64) -> Result<Self> {
        if k == 0 || dims.contains(&0) {
            return Err(Error::Invalid(format!(
                "latent dim {k} and view dims {dims:?} must be positive"
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Invalid(format!(
                "noise sigma {noise_sigma} must be finite and >= 0"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_scale = 1.0 / (k as f64).sqrt();
        let weights = dims.map(|d| (0..d * k).map(|_| w_scale * gauss(&mut rng)).collect());
        let biases = dims.map(|d| (0..d).map(|_| 0.1 * gauss(&mut rng)).collect());
        Ok(Self {
            k,
            dims,
            noise_sigma,
            weights,
            biases,
        })
    }

    /// Noise-free view `m` of latent `z`.
    pub fn view(&self, m: usize, z: &[f64]) -> Vec<f64> {
        let w = &self.weights[m];
        (0..self.dims[m])
            .map(|r| {
                let dot: f64 = w[r * self.k..(r + 1) * self.k]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a * b)
                    .sum();
                (dot + self.biases[m][r]).tanh()
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentSample {
        let z: Vec<f64> = (0..self.k).map(|_| gauss(rng)).collect();
        let views = [0, 1, 2].map(|m| {
            let mut v = self.view(m, &z);
            if self.noise_sigma > 0.0 {
                for x in v.iter_mut() {
                    *x += self.noise_sigma * gauss(rng);
                }
            }
            v
        });
        LatentSample { z_latent: z, views }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<LatentSample> {
        (0..batch).map(|_| self.sample(rng)).collect()
    }
}

/// Generator parameters drawn from `seed`, samples from a stream derived
/// from the same seed.
pub fn gen_latent_batch(
    seed: u64,
    batch: usize,
    k: usize,
    dims: [usize; 3],
    noise_sigma: f64,
) -> Result<Vec<LatentSample>> {
    if batch < 2 {
        return Err(Error::BatchTooSmall(batch));
    }
    let generator = LatentGenerator::new(seed, k, dims, noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Ok(generator.sample_batch(&mut rng, batch))
}

/// Feature-level augmentation for continuous views: a random subset of
/// coordinates is zeroed, then Gaussian jitter is added everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureAugment {
    pub mask_ratio: f64,
    pub jitter: f64,
}

impl FeatureAugment {
    pub const NONE: FeatureAugment = FeatureAugment {
        mask_ratio: 0.0,
        jitter: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_ratio)
            || !(self.jitter >= 0.0 && self.jitter.is_finite())
        {
            return Err(Error::Config(format!(
                "invalid feature augmentation {self:?}"
            )));
        }
        Ok(())
    }

    pub fn apply<R: Rng + ?Sized>(&self, view: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = view.to_vec();
        let k = super::augment::masked_count(self.mask_ratio, view.len());
        for i in sample(rng, view.len(), k) {
            out[i] = 0.0;
        }
        if self.jitter > 0.0 {
            let noise = Normal::new(0.0, self.jitter).expect("validated jitter");
            for x in out.iter_mut() {
                *x += noise.sample(rng);
            }
        }
        out
    }
}
