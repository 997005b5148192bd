use super::TargetDensity;

/// Heavy-tailed 1D target `f(θ) = 1 / (1 + (θ/2)²)`, normalizer `2π`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cauchy;

impl Cauchy {
    pub fn new() -> Self {
        Cauchy
    }
}

impl TargetDensity for Cauchy {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let u = theta[0] / 2.0;
        -(u * u).ln_1p()
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some((2.0 * std::f64::consts::PI).ln())
    }

    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let u = theta[0] / 2.0;
        Some(vec![-u / (1.0 + u * u)])
    }
}
