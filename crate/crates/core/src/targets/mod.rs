//! Unnormalized log-posteriors.
//!
//! A target only needs to evaluate `log f(θ)`. Synthetic targets also expose
//! their log-normalizer so that exact KL divergences can be tracked, and
//! targets with a cheap analytic gradient expose it for the peak search.

mod banana;
mod cauchy;
mod gmm;
mod logistic;
mod sensor;

use std::sync::Arc;

pub use banana::Banana;
pub use cauchy::Cauchy;
pub use gmm::{gmm1d_four, gmm2d_five, GaussianMixtureTarget};
pub use logistic::{load_csv_dataset, LogisticModel, LogisticTarget};
pub use sensor::{SensorModel, SensorTarget};

/// An unnormalized log-density `log f(θ)` on `ℝ^d`.
///
/// `log_density` may return `-inf` for zero-density regions. Implementations
/// must be pure: repeated evaluation at the same point is bit-identical.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> f64;

    /// `log ∫ f`, when known in closed form.
    fn log_normalizer(&self) -> Option<f64> {
        None
    }

    /// `∇ log f(θ)`, when the target provides it.
    fn gradient(&self, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn log_normalizer(&self) -> Option<f64> {
        (**self).log_normalizer()
    }
    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(theta)
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn log_normalizer(&self) -> Option<f64> {
        (**self).log_normalizer()
    }
    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(theta)
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn log_normalizer(&self) -> Option<f64> {
        (**self).log_normalizer()
    }
    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(theta)
    }
}

type LogFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A user-supplied target built from callbacks.
pub struct FnTarget {
    dim: usize,
    log_f: Box<LogFn>,
    grad: Option<Box<GradFn>>,
    log_normalizer: Option<f64>,
}

impl FnTarget {
    pub fn new(dim: usize, log_f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            log_f: Box::new(log_f),
            grad: None,
            log_normalizer: None,
        }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }

    pub fn with_log_normalizer(mut self, log_z: f64) -> Self {
        self.log_normalizer = Some(log_z);
        self
    }
}

impl TargetDensity for FnTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (self.log_f)(theta)
    }
    fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }
    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(theta))
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn builtin_targets() -> Vec<Box<dyn TargetDensity>> {
        let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
        vec![
            Box::new(Cauchy::new()),
            Box::new(gmm1d_four()),
            Box::new(gmm2d_five(3)),
            Box::new(Banana::new(0.1)),
            Box::new(SensorTarget::new(SensorModel::load(format!("{data}/sensor_n11.json")).unwrap()).unwrap()),
            Box::new(LogisticTarget::new(load_csv_dataset(format!("{data}/nodal.csv"), None).unwrap())),
        ]
    }

    proptest! {
        #[test]
        fn evaluation_is_bit_identical_and_never_nan(raw in proptest::collection::vec(-3.0f64..3.0, 16)) {
            for f in builtin_targets() {
                let x = &raw[..f.dim()];
                let a = f.log_density(x);
                prop_assert!(!a.is_nan());
                prop_assert!(a < f64::INFINITY);
                prop_assert_eq!(a.to_bits(), f.log_density(x).to_bits());
            }
        }
    }
}
