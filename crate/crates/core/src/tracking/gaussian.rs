//! Gaussian particle filter building blocks, generic over the state size.

use nalgebra::{DMatrix, SMatrix, SVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Added to the posterior covariance before sampling from it.
pub const COVARIANCE_JITTER: f64 = 1e-8;

/// `L` with `L L^T = cov` for a symmetric positive-semidefinite matrix;
/// negative eigenvalues from round-off are clipped to zero.
pub fn psd_sqrt<const D: usize>(cov: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    // dynamic storage: the static eigen solver is not available for a generic D
    let sym = DMatrix::from_fn(D, D, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    let eig = sym.symmetric_eigen();
    let mut l = eig.eigenvectors;
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        l.column_mut(k).scale_mut(s);
    }
    SMatrix::from_fn(|i, j| l[(i, j)])
}

pub fn standard_normal<const D: usize>(rng: &mut ChaCha8Rng) -> SVector<f64, D> {
    SVector::from_fn(|_, _| rng.sample(StandardNormal))
}

/// State evolution between consecutive slice times.
pub trait StateTransition<const D: usize>: Sync {
    fn propagate(&self, x: &SVector<f64, D>, rng: &mut ChaCha8Rng) -> SVector<f64, D>;
}

/// `x_{t+1} = x_t + u_t`, `u_t ~ N(0, cov)`.
#[derive(Debug, Clone)]
pub struct RandomWalk<const D: usize> {
    sqrt_cov: SMatrix<f64, D, D>,
}

impl<const D: usize> RandomWalk<D> {
    pub fn new(cov: &SMatrix<f64, D, D>) -> Self {
        RandomWalk { sqrt_cov: psd_sqrt(cov) }
    }
}

impl<const D: usize> StateTransition<D> for RandomWalk<D> {
    fn propagate(&self, x: &SVector<f64, D>, rng: &mut ChaCha8Rng) -> SVector<f64, D> {
        x + self.sqrt_cov * standard_normal::<D>(rng)
    }
}

/// Weighted mean and covariance, accumulated in particle order.
pub fn weighted_moments<const D: usize>(
    particles: &[SVector<f64, D>],
    weights: &[f64],
) -> Result<(SVector<f64, D>, SMatrix<f64, D, D>)> {
    if particles.len() != weights.len() || particles.is_empty() {
        return Err(Error::InvalidArgument("particles and weights differ in length".into()));
    }
    let mut mean = SVector::<f64, D>::zeros();
    for (p, w) in particles.iter().zip(weights) {
        mean += p * *w;
    }
    let mut cov = SMatrix::<f64, D, D>::zeros();
    for (p, w) in particles.iter().zip(weights) {
        let d = p - mean;
        cov += d * d.transpose() * *w;
    }
    Ok((mean, cov))
}

/// Particle cloud advanced one slice time at a time.
///
/// Particle `j` at step `t` draws from the random stream `(seed, t, j)`,
/// so the cloud is independent of evaluation order and thread count.
#[derive(Debug, Clone)]
pub struct GaussianFilter<const D: usize> {
    particles: Vec<SVector<f64, D>>,
    seed: u64,
    step: u64,
}

impl<const D: usize> GaussianFilter<D> {
    /// Initial cloud of `count` draws from `N(center, cov)`.
    pub fn from_gaussian(center: &SVector<f64, D>, cov: &SMatrix<f64, D, D>, count: usize, seed: u64) -> Self {
        let l = psd_sqrt(cov);
        let particles = (0..count)
            .into_par_iter()
            .map(|j| {
                let mut r = rng::stream(seed, Domain::Particles, 0, j as u64);
                center + l * standard_normal::<D>(&mut r)
            })
            .collect();
        GaussianFilter { particles, seed, step: 1 }
    }

    pub fn particles(&self) -> &[SVector<f64, D>] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Index of the random stream used by the next update.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Draws a fresh cloud from `N(center, cov + jitter I)` and pushes each
    /// draw through `transition`.
    pub fn resample_and_propagate<T: StateTransition<D>>(
        &mut self,
        center: &SVector<f64, D>,
        cov: &SMatrix<f64, D, D>,
        transition: &T,
    ) {
        let l = psd_sqrt(&(cov + SMatrix::<f64, D, D>::identity() * COVARIANCE_JITTER));
        let (seed, step) = (self.seed, self.step);
        self.particles = (0..self.particles.len())
            .into_par_iter()
            .map(|j| {
                let mut r = rng::stream(seed, Domain::Particles, step, j as u64);
                let x = center + l * standard_normal::<D>(&mut r);
                transition.propagate(&x, &mut r)
            })
            .collect();
        self.step += 1;
    }

    /// Propagates the current cloud without a measurement.
    pub fn predict<T: StateTransition<D>>(&mut self, transition: &T) {
        let (seed, step) = (self.seed, self.step);
        self.particles = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(j, x)| {
                let mut r = rng::stream(seed, Domain::Particles, step, j as u64);
                transition.propagate(x, &mut r)
            })
            .collect();
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};

    #[test]
    fn zero_covariance_keeps_center() {
        let center = Vector2::new(1.0, -2.0);
        let mut f = GaussianFilter::from_gaussian(&center, &Matrix2::zeros(), 50, 3);
        assert!(f.particles().iter().all(|p| *p == center));
        f.resample_and_propagate(&center, &Matrix2::zeros(), &RandomWalk::new(&Matrix2::zeros()));
        // only the covariance jitter remains
        assert!(f.particles().iter().all(|p| (p - center).norm() < 1e-3));
    }

    #[test]
    fn covariances_add() {
        let sigma_t = Matrix2::new(0.5, 0.2, 0.2, 0.3);
        let sigma_d = Matrix2::new(0.1, -0.05, -0.05, 0.4);
        let center = Vector2::new(0.3, 0.7);
        let mut f = GaussianFilter::from_gaussian(&center, &Matrix2::zeros(), 100_000, 11);
        f.resample_and_propagate(&center, &sigma_t, &RandomWalk::new(&sigma_d));
        let w = vec![1.0 / f.len() as f64; f.len()];
        let (mean, cov) = weighted_moments(f.particles(), &w).unwrap();
        let expected = sigma_t + sigma_d;
        assert!((mean - center).norm() < 0.01);
        // standard error of a covariance entry is about sqrt(2/n) * scale
        assert!((cov - expected).abs().max() < 0.01, "{cov} vs {expected}");
    }

    #[test]
    fn determinism_across_thread_counts() {
        let cov = Matrix2::new(0.5, 0.2, 0.2, 0.3);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut f = GaussianFilter::from_gaussian(&Vector2::zeros(), &cov, 257, 5);
                f.resample_and_propagate(&Vector2::new(1.0, 1.0), &cov, &RandomWalk::new(&cov));
                f.predict(&RandomWalk::new(&cov));
                f.particles().to_vec()
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn dominant_particle_moments() {
        let ps = vec![Vector2::new(1.0, 2.0), Vector2::new(5.0, 5.0), Vector2::new(-3.0, 0.0)];
        let (m, c) = weighted_moments(&ps, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m, ps[0]);
        assert_eq!(c, Matrix2::zeros());
    }
}
