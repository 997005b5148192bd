use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::TargetDensity;
use crate::error::Result;
use crate::gaussmix::{GaussianComponent, Mixture};
use crate::rng;

/// A normalized Gaussian-mixture target (`log_normalizer = 0`).
#[derive(Debug, Clone)]
pub struct GaussianMixtureTarget {
    mixture: Mixture,
}

impl GaussianMixtureTarget {
    /// Build from weights, means and covariances; the weights must lie on
    /// the simplex.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let components = means
            .into_iter()
            .zip(covs)
            .map(|(m, c)| {
                let d = m.len();
                let cov = DMatrix::from_fn(d, d, |i, j| c.get(i).and_then(|r| r.get(j)).copied().unwrap_or(f64::NAN));
                GaussianComponent::new(DVector::from_vec(m), cov)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mixture: Mixture::new(weights, components)?,
        })
    }

    pub fn from_mixture(mixture: Mixture) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mixture
    }
}

impl TargetDensity for GaussianMixtureTarget {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.mixture.log_density_unchecked(theta)
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }

    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        Some(self.mixture.grad_log_density_unchecked(theta))
    }
}

/// Four univariate Gaussians with distinct locations and scales.
pub fn gmm1d_four() -> GaussianMixtureTarget {
    let spec = [(0.2, -9.0, 1.2), (0.3, -3.0, 0.8), (0.3, 2.0, 1.0), (0.2, 8.0, 1.5)];
    let components = spec
        .iter()
        .map(|&(_, m, sd)| GaussianComponent::isotropic(DVector::from_element(1, m), sd * sd))
        .collect::<Result<Vec<_>>>()
        .expect("preset components are valid");
    let weights = spec.iter().map(|s| s.0).collect();
    GaussianMixtureTarget::from_mixture(Mixture::new(weights, components).expect("preset weights are valid"))
}

/// Five bivariate Gaussians with random means in `[-5, 5]²`, random
/// orientations and scales, drawn from `seed`.
pub fn gmm2d_five(seed: u64) -> GaussianMixtureTarget {
    let mut rng = rng::stream(seed);
    let mut raw_weights = Vec::with_capacity(5);
    let mut components = Vec::with_capacity(5);
    for _ in 0..5 {
        raw_weights.push(rng.random_range(0.5..1.5));
        let mean = DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (s1, s2): (f64, f64) = (rng.random_range(0.4..1.5), rng.random_range(0.4..1.5));
        let rot = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![s1 * s1, s2 * s2]));
        let cov = &rot * diag * rot.transpose();
        components.push(GaussianComponent::new(mean, cov).expect("rotation of a PD diagonal is PD"));
    }
    let total: f64 = raw_weights.iter().sum();
    let weights = raw_weights.iter().map(|w| w / total).collect();
    GaussianMixtureTarget::from_mixture(Mixture::new(weights, components).expect("normalized weights"))
}
