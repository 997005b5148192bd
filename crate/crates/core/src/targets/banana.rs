use super::TargetDensity;

/// The 2D "banana" target
/// `log f(θ) = -θ₁²/200 - (θ₂ + Bθ₁² - 100B)²/2`.
///
/// The shear `(θ₁, θ₂) ↦ (θ₁, θ₂ + Bθ₁² - 100B)` has unit Jacobian, so the
/// normalizer is `20π` for every curvature `B`.
#[derive(Debug, Clone, Copy)]
pub struct Banana {
    pub curvature: f64,
}

impl Banana {
    pub fn new(curvature: f64) -> Self {
        Self { curvature }
    }

    fn sheared(&self, theta: &[f64]) -> f64 {
        let b = self.curvature;
        theta[1] + b * theta[0] * theta[0] - 100.0 * b
    }
}

impl TargetDensity for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let u = self.sheared(theta);
        -theta[0] * theta[0] / 200.0 - u * u / 2.0
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some((20.0 * std::f64::consts::PI).ln())
    }

    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let u = self.sheared(theta);
        Some(vec![
            -theta[0] / 100.0 - 2.0 * self.curvature * theta[0] * u,
            -u,
        ])
    }
}
