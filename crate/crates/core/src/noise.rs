//! Pre-drawn Wiener increments for Monte-Carlo sample paths.
//!
//! Each (sample, particle) pair owns an independent counter-derived RNG
//! substream, so the realization is fully determined by (seed, M, N_T, N, dt)
//! and independent of generation or evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::potential::Vec3;

/// SplitMix64 finalizer over a (seed, a, b) triple.
pub(crate) fn substream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// M x N_T x N x 3 Gaussian increments with per-component variance dt.
#[derive(Clone, Debug)]
pub struct NoiseRealization {
    pub seed: u64,
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_particles: usize,
    pub dt: f64,
    /// Flattened [sample][step][particle] layout.
    increments: Vec<Vec3>,
}

impl NoiseRealization {
    pub fn generate(
        seed: u64,
        n_samples: usize,
        n_steps: usize,
        n_particles: usize,
        dt: f64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::InvalidParam(format!("noise dt must be >= 0, got {dt}")));
        }
        let sd = dt.sqrt();
        let mut increments = vec![Vec3::zeros(); n_samples * n_steps * n_particles];
        for k in 0..n_samples {
            for i in 0..n_particles {
                let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, k as u64, i as u64));
                for n in 0..n_steps {
                    let g = Vec3::new(
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    );
                    increments[(k * n_steps + n) * n_particles + i] = sd * g;
                }
            }
        }
        Ok(Self { seed, n_samples, n_steps, n_particles, dt, increments })
    }

    /// All increments of one sample path.
    pub fn path(&self, sample: usize) -> NoisePath<'_> {
        assert!(sample < self.n_samples, "sample index out of range");
        NoisePath { noise: self, sample }
    }

    /// A realization of the same shape with every increment zero.
    pub fn zeros(n_samples: usize, n_steps: usize, n_particles: usize, dt: f64) -> Self {
        Self {
            seed: 0,
            n_samples,
            n_steps,
            n_particles,
            dt,
            increments: vec![Vec3::zeros(); n_samples * n_steps * n_particles],
        }
    }

    pub fn flat(&self) -> &[Vec3] {
        &self.increments
    }
}

/// View of one sample path's increments.
#[derive(Clone, Copy)]
pub struct NoisePath<'a> {
    noise: &'a NoiseRealization,
    sample: usize,
}

impl<'a> NoisePath<'a> {
    pub fn n_steps(&self) -> usize {
        self.noise.n_steps
    }

    /// Per-particle increments for step n (slice of length N).
    pub fn step(&self, n: usize) -> &'a [Vec3] {
        let np = self.noise.n_particles;
        let base = (self.sample * self.noise.n_steps + n) * np;
        &self.noise.increments[base..base + np]
    }
}
