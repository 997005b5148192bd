//! Monte Carlo estimators for the ELBO and for the derivative of the
//! effective discrepancy with respect to the new mixing weight.
//!
//! All density ratios are formed as differences of log-densities; nothing
//! here exponentiates an unnormalized density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmix::{log_add_exp, GaussianComponent, Mixture, Point};
use crate::rng;
use crate::targets::TargetDensity;

/// Default particle count for stochastic gradients.
pub const DEFAULT_PARTICLES: usize = 100;

/// Largest tolerated fraction of non-finite integrand samples.
pub const MAX_NON_FINITE_FRACTION: f64 = 0.01;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Finite samples that entered the mean.
    pub n: usize,
    /// Samples dropped because the integrand was not finite.
    pub non_finite: usize,
}

impl McEstimate {
    /// Mean and `sd/√n` of the finite values. Fails when more than 1% of
    /// the values are non-finite, or when fewer than two remain.
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        let total = values.len();
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let non_finite = total - finite.len();
        if non_finite as f64 > MAX_NON_FINITE_FRACTION * total as f64 || finite.len() < 2 {
            return Err(Error::NonFiniteSamples { non_finite, total });
        }
        if non_finite > 0 {
            log::warn!("{non_finite} of {total} integrand samples were non-finite and were dropped");
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            value: mean,
            std_error: (var / n).sqrt(),
            n: finite.len(),
            non_finite,
        })
    }
}

/// `γ_α(θ) = log((1-α) q(θ) + α h(θ)) - log f(θ)`, evaluated in log space.
///
/// `α = 0` and `α = 1` skip the vanished term. The result is `+inf` where
/// the mixture has density but `f(θ) = 0`.
pub fn gamma(q_prev: &Mixture, h: &GaussianComponent, alpha: f64, target: &dyn TargetDensity, x: &[f64]) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if x.len() != q_prev.dim() || x.len() != h.dim() || x.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: q_prev.dim(),
            got: x.len(),
        });
    }
    Ok(gamma_unchecked(q_prev, h, alpha, target, x))
}

pub(crate) fn gamma_unchecked(q_prev: &Mixture, h: &GaussianComponent, alpha: f64, target: &dyn TargetDensity, x: &[f64]) -> f64 {
    let log_mix = if alpha == 0.0 {
        q_prev.log_density_unchecked(x)
    } else if alpha == 1.0 {
        h.log_density_unchecked(x)
    } else {
        log_add_exp(
            (1.0 - alpha).ln() + q_prev.log_density_unchecked(x),
            alpha.ln() + h.log_density_unchecked(x),
        )
    };
    let log_f = target.log_density(x);
    if log_f == f64::NEG_INFINITY && log_mix > f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    log_mix - log_f
}

fn check_target(q: &Mixture, target: &dyn TargetDensity) -> Result<()> {
    if q.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

fn require_samples(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 Monte Carlo samples, got {n}")));
    }
    Ok(())
}

/// `ELBO(q) = E_q[log f - log q]` from `n` draws of `q`; the effective
/// discrepancy is its negative.
pub fn elbo_estimate(q: &Mixture, target: &dyn TargetDensity, n: usize, seed: u64) -> Result<McEstimate> {
    require_samples(n)?;
    check_target(q, target)?;
    let draws = q.sample(n, seed)?;
    let values: Vec<f64> = draws
        .par_iter()
        .map(|x| {
            let s = x.as_slice();
            let log_f = target.log_density(s);
            if log_f == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_f - q.log_density_unchecked(s)
            }
        })
        .collect();
    McEstimate::from_samples(&values)
}

/// The two independent sample streams used by the α estimators: draws from
/// `h` and draws from `q_prev`, each from its own sub-seed.
struct PairedDraws {
    from_h: Vec<Point>,
    from_q: Vec<Point>,
}

impl PairedDraws {
    fn new(q_prev: &Mixture, h: &GaussianComponent, n: usize, seed: u64) -> Self {
        let mut rng_h = rng::stream(rng::derive_seed(seed, &[1]));
        let mut rng_q = rng::stream(rng::derive_seed(seed, &[2]));
        Self {
            from_h: (0..n).map(|_| h.sample_with(&mut rng_h)).collect(),
            from_q: (0..n).map(|_| q_prev.sample_with(&mut rng_q)).collect(),
        }
    }
}

fn check_alpha_inputs(q_prev: &Mixture, h: &GaussianComponent, alpha: f64, target: &dyn TargetDensity, n: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    require_samples(n)?;
    check_target(q_prev, target)?;
    if h.dim() != q_prev.dim() {
        return Err(Error::DimensionMismatch {
            expected: q_prev.dim(),
            got: h.dim(),
        });
    }
    Ok(())
}

/// Unbiased estimate of `∂D̃/∂α = E_h γ_α - E_{q_prev} γ_α` from `n` paired
/// draws.
pub fn alpha_gradient_estimate(
    q_prev: &Mixture,
    h: &GaussianComponent,
    alpha: f64,
    target: &dyn TargetDensity,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_alpha_inputs(q_prev, h, alpha, target, n)?;
    let draws = PairedDraws::new(q_prev, h, n, seed);
    let values: Vec<f64> = draws
        .from_h
        .par_iter()
        .zip(draws.from_q.par_iter())
        .map(|(xh, xq)| {
            gamma_unchecked(q_prev, h, alpha, target, xh.as_slice()) - gamma_unchecked(q_prev, h, alpha, target, xq.as_slice())
        })
        .collect();
    McEstimate::from_samples(&values)
}

/// Estimate of the effective discrepancy `D̃((1-α) q_prev + α h)` built on
/// the same sample streams as [`alpha_gradient_estimate`] for the same seed:
/// `(1-α) mean γ_α(θ_q) + α mean γ_α(θ_h)`.
///
/// With a shared seed, finite differences of this in `α` are common-random-
/// number estimates of the α-gradient.
pub fn discrepancy_estimate(
    q_prev: &Mixture,
    h: &GaussianComponent,
    alpha: f64,
    target: &dyn TargetDensity,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_alpha_inputs(q_prev, h, alpha, target, n)?;
    let draws = PairedDraws::new(q_prev, h, n, seed);
    let values: Vec<f64> = draws
        .from_h
        .par_iter()
        .zip(draws.from_q.par_iter())
        .map(|(xh, xq)| {
            (1.0 - alpha) * gamma_unchecked(q_prev, h, alpha, target, xq.as_slice())
                + alpha * gamma_unchecked(q_prev, h, alpha, target, xh.as_slice())
        })
        .collect();
    McEstimate::from_samples(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::GaussianMixtureTarget;
    use nalgebra::DVector;

    fn scalar(mu: f64, var: f64) -> GaussianComponent {
        GaussianComponent::isotropic(DVector::from_element(1, mu), var).unwrap()
    }

    fn gauss_target(mu: f64, var: f64) -> GaussianMixtureTarget {
        GaussianMixtureTarget::from_mixture(Mixture::single(scalar(mu, var)))
    }

    #[test]
    fn gamma_endpoints() {
        let q = Mixture::single(scalar(0.0, 1.0));
        let h = scalar(2.0, 0.5);
        let f = gauss_target(1.0, 2.0);
        let x = [0.7];
        let lq = q.log_density(&x).unwrap();
        let lh = h.log_density(&x).unwrap();
        let lf = f.log_density(&x);
        assert_eq!(gamma(&q, &h, 0.0, &f, &x).unwrap(), lq - lf);
        assert_eq!(gamma(&q, &h, 1.0, &f, &x).unwrap(), lh - lf);
        assert!(gamma(&q, &h, -0.1, &f, &x).is_err());
    }

    #[test]
    fn gamma_vanishes_when_everything_matches() {
        let q = Mixture::single(scalar(0.5, 1.5));
        let h = scalar(0.5, 1.5);
        let f = gauss_target(0.5, 1.5);
        for alpha in [0.0, 0.3, 1.0] {
            for x in [-2.0, 0.0, 3.0] {
                assert!(gamma(&q, &h, alpha, &f, &[x]).unwrap().abs() < 1e-13);
            }
        }
    }

    #[test]
    fn elbo_is_zero_for_exact_normalized_target() {
        let q = Mixture::new(vec![0.4, 0.6], vec![scalar(-1.0, 1.0), scalar(2.0, 0.5)]).unwrap();
        let f = GaussianMixtureTarget::from_mixture(q.clone());
        let est = elbo_estimate(&q, &f, 1000, 1).unwrap();
        assert!(est.value.abs() <= 3.0 * est.std_error + 1e-12);
    }

    #[test]
    fn elbo_matches_closed_form_kl() {
        // KL(N(0,1) || N(1,1)) = 0.5
        let q = Mixture::single(scalar(0.0, 1.0));
        let est = elbo_estimate(&q, &gauss_target(1.0, 1.0), 10_000, 2).unwrap();
        assert!((est.value + 0.5).abs() <= 3.0 * est.std_error, "{est:?}");
        // KL(N(0,1) || N(0,4)) = (1/4 - 1 + ln 4)/2
        let kl = 0.5 * (0.25 - 1.0 + 4f64.ln());
        assert!((kl - 0.318_147_180_559_945_3).abs() < 1e-12);
        let est = elbo_estimate(&q, &gauss_target(0.0, 4.0), 10_000, 3).unwrap();
        assert!((est.value + kl).abs() <= 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn elbo_is_unbiased_against_quadrature() {
        use crate::oracle::{quadrature_discrepancy, Grid};
        use crate::targets::Cauchy;
        let q = Mixture::new(vec![0.6, 0.4], vec![scalar(-1.0, 0.5), scalar(2.0, 1.5)]).unwrap();
        let f = Cauchy::new();
        let grid = Grid::uniform(&[-40.0], &[40.0], 16_001).unwrap();
        let exact = -quadrature_discrepancy(|x| q.log_density(x).unwrap(), &f, &grid);
        let runs: Vec<McEstimate> = (0..200).map(|s| elbo_estimate(&q, &f, 100, 1000 + s).unwrap()).collect();
        let mean = runs.iter().map(|e| e.value).sum::<f64>() / 200.0;
        let pooled = runs.iter().map(|e| e.std_error.powi(2)).sum::<f64>().sqrt() / 200.0;
        assert!((mean - exact).abs() <= 4.0 * pooled, "mean {mean} exact {exact} se {pooled}");
    }

    #[test]
    fn elbo_is_seed_deterministic() {
        let q = Mixture::single(scalar(0.0, 1.0));
        let f = gauss_target(1.0, 1.0);
        assert_eq!(elbo_estimate(&q, &f, 500, 4).unwrap(), elbo_estimate(&q, &f, 500, 4).unwrap());
        assert!(elbo_estimate(&q, &f, 1, 4).is_err());
    }

    #[test]
    fn support_mismatch_aborts() {
        use crate::targets::FnTarget;
        let q = Mixture::single(scalar(0.0, 1.0));
        // zero density on the negative half-line
        let f = FnTarget::new(1, |x| if x[0] < 0.0 { f64::NEG_INFINITY } else { -x[0] });
        assert!(matches!(
            elbo_estimate(&q, &f, 1000, 5),
            Err(Error::NonFiniteSamples { .. })
        ));
        let h = scalar(1.0, 1.0);
        assert!(alpha_gradient_estimate(&q, &h, 0.5, &f, 1000, 5).is_err());
    }

    #[test]
    fn gradient_vanishes_for_identical_densities() {
        let q = Mixture::single(scalar(0.3, 2.0));
        let h = scalar(0.3, 2.0);
        let f = gauss_target(1.0, 1.0);
        for alpha in [0.0, 0.4, 1.0] {
            let est = alpha_gradient_estimate(&q, &h, alpha, &f, 5000, 6).unwrap();
            assert!(est.value.abs() <= 3.0 * est.std_error, "{alpha}: {est:?}");
        }
    }

    #[test]
    fn std_error_scales_as_inverse_sqrt_n() {
        let q = Mixture::single(scalar(0.0, 1.0));
        let f = gauss_target(0.0, 4.0);
        let se: Vec<f64> = [100usize, 1000, 10_000]
            .iter()
            .map(|&n| elbo_estimate(&q, &f, n, 8).unwrap().std_error)
            .collect();
        for w in se.windows(2) {
            let ratio = w[0] / w[1];
            let expected = 10f64.sqrt();
            assert!((ratio / expected - 1.0).abs() < 0.2, "{ratio}");
        }
    }
}
