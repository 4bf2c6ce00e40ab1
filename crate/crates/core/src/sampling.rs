//! Seeded generators for the distribution families used by the Monte Carlo
//! verifiers: uniform ball, uniform sphere, product cube, isotropic Gaussian
//! and ε-perturbed point sets.
//!
//! Every point `i` of a sample is drawn from its own ChaCha8 stream
//! (`stream = i`) keyed by the seed, so a sample is a pure function of
//! `(spec, seed, index)` and may be generated by any number of workers.
//! Gaussian coordinates use the ziggurat sampler of `rand_distr::StandardNormal`;
//! uniforms are the 53-bit `f64` draws of `rand`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{invalid_parameter, Error, Result};
use crate::scalar::Scalar;

/// 64-bit seed. Equal seeds give bit-identical samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives an independent seed for sub-experiment `index` (splitmix64 mix).
    pub fn child(self, index: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }

    /// Generator for point `index` of a sample.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// A distribution family with its parameters.
#[derive(Debug, Clone)]
pub enum DistributionSpec {
    UnitBall { dim: usize },
    UnitSphere { dim: usize },
    /// Coordinates i.i.d. uniform on `[0, side]`.
    ProductCube { dim: usize, side: f64 },
    IsotropicGaussian { dim: usize },
    /// Point `i` is `base_i` plus a uniform draw from the `radius`-ball.
    PerturbedSet {
        base: PointCloud<f64>,
        radius: f64,
    },
}

impl DistributionSpec {
    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::UnitBall { dim }
            | DistributionSpec::UnitSphere { dim }
            | DistributionSpec::ProductCube { dim, .. }
            | DistributionSpec::IsotropicGaussian { dim } => *dim,
            DistributionSpec::PerturbedSet { base, .. } => base.dim(),
        }
    }

    /// Draws `count` points. For a perturbed set `count` must equal the base size.
    pub fn sample<T: Scalar>(&self, count: usize, seed: Seed) -> Result<PointCloud<T>> {
        match self {
            DistributionSpec::UnitBall { dim } => sample_ball(*dim, count, seed),
            DistributionSpec::UnitSphere { dim } => sample_sphere(*dim, count, seed),
            DistributionSpec::ProductCube { dim, side } => sample_cube(*dim, count, *side, seed),
            DistributionSpec::IsotropicGaussian { dim } => sample_gaussian(*dim, count, seed),
            DistributionSpec::PerturbedSet { base, radius } => {
                if count != base.len() {
                    return Err(invalid_parameter(format!(
                        "perturbed set has {} base points, {count} requested",
                        base.len()
                    )));
                }
                perturb_set(base, *radius, seed)
            }
        }
    }
}

fn check_shape(dim: usize, count: usize) -> Result<()> {
    if dim == 0 {
        return Err(invalid_parameter("dimension must be at least 1"));
    }
    if count == 0 {
        return Err(invalid_parameter("count must be at least 1"));
    }
    Ok(())
}

/// Fills rows in parallel; row `i` only ever sees stream `i`.
fn generate<T, F>(dim: usize, count: usize, seed: Seed, fill: F) -> Result<PointCloud<T>>
where
    T: Scalar,
    F: Fn(usize, &mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let mut data = vec![0.0f64; dim * count];
    data.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
        let mut rng = seed.stream(i as u64);
        fill(i, &mut rng, row);
    });
    let converted: Vec<T> = data.into_iter().map(T::of).collect();
    PointCloud::from_row_slice(count, dim, &converted)
}

fn fill_gaussian(rng: &mut ChaCha8Rng, row: &mut [f64]) {
    for v in row.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Uniform direction written into `row` (normalized Gaussian draw).
fn fill_direction(rng: &mut ChaCha8Rng, row: &mut [f64]) {
    loop {
        fill_gaussian(rng, row);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
            return;
        }
    }
}

/// Uniform on (0, 1].
fn open_closed_unit(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

fn fill_ball(rng: &mut ChaCha8Rng, row: &mut [f64]) {
    fill_direction(rng, row);
    let radius = open_closed_unit(rng).powf(1.0 / row.len() as f64);
    row.iter_mut().for_each(|v| *v *= radius);
}

/// Uniform points in the closed unit n-ball: uniform direction scaled by `U^(1/n)`.
pub fn sample_ball<T: Scalar>(dim: usize, count: usize, seed: Seed) -> Result<PointCloud<T>> {
    check_shape(dim, count)?;
    generate(dim, count, seed, |_, rng, row| fill_ball(rng, row))
}

/// Rotationally invariant points on the unit sphere in R^n, n >= 2.
pub fn sample_sphere<T: Scalar>(dim: usize, count: usize, seed: Seed) -> Result<PointCloud<T>> {
    check_shape(dim, count)?;
    if dim < 2 {
        return Err(invalid_parameter("sphere sampling needs dimension >= 2"));
    }
    generate(dim, count, seed, |_, rng, row| fill_direction(rng, row))
}

/// Coordinates i.i.d. uniform on `[0, side]`.
pub fn sample_cube<T: Scalar>(
    dim: usize,
    count: usize,
    side: f64,
    seed: Seed,
) -> Result<PointCloud<T>> {
    check_shape(dim, count)?;
    if !(side > 0.0 && side.is_finite()) {
        return Err(invalid_parameter(format!("cube side must be positive, got {side}")));
    }
    generate(dim, count, seed, |_, rng, row| {
        for v in row.iter_mut() {
            *v = side * rng.random::<f64>();
        }
    })
}

/// I.i.d. standard normal coordinates.
pub fn sample_gaussian<T: Scalar>(dim: usize, count: usize, seed: Seed) -> Result<PointCloud<T>> {
    check_shape(dim, count)?;
    generate(dim, count, seed, |_, rng, row| fill_gaussian(rng, row))
}

/// Moves every base point by an independent uniform draw from the ε-ball.
///
/// Base points must lie in the ball of radius `1 - ε` so the output stays in
/// the unit ball.
pub fn perturb_set<T: Scalar>(base: &PointCloud<f64>, radius: f64, seed: Seed) -> Result<PointCloud<T>> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(invalid_parameter(format!(
            "perturbation radius must lie in (0, 1), got {radius}"
        )));
    }
    for (row, n) in base.norms().into_iter().enumerate() {
        if n > 1.0 - radius {
            return Err(Error::InvalidInput(format!(
                "base point {row} has norm {n} > 1 - ε = {}",
                1.0 - radius
            )));
        }
    }
    let dim = base.dim();
    let centers = base.to_row_major();
    generate(dim, base.len(), seed, |i, rng, row| {
        fill_ball(rng, row);
        for (v, c) in row.iter_mut().zip(&centers[i * dim..(i + 1) * dim]) {
            *v = c + radius * *v;
        }
    })
}
