use super::ReferencePosterior;
use crate::error::{Error, Result};
use crate::gaussmix::{GaussianComponent, Mixture};
use crate::targets::TargetDensity;

/// `‖m_q - m_ref‖₁ / ‖m_ref‖₁`.
pub fn rem_of_means(q_mean: &[f64], ref_mean: &[f64]) -> Result<f64> {
    if q_mean.len() != ref_mean.len() {
        return Err(Error::DimensionMismatch {
            expected: ref_mean.len(),
            got: q_mean.len(),
        });
    }
    let norm: f64 = ref_mean.iter().map(|v| v.abs()).sum();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("reference mean has zero l1 norm".into()));
    }
    Ok(q_mean.iter().zip(ref_mean).map(|(a, b)| (a - b).abs()).sum::<f64>() / norm)
}

/// Relative l1 error of the mixture's exact mean against the reference mean.
pub fn rem(q: &Mixture, reference: &ReferencePosterior) -> Result<f64> {
    let (mean, _) = q.moments();
    rem_of_means(mean.as_slice(), &reference.mean)
}

/// Closed-form `KL(a ‖ b)` between two Gaussians, via triangular solves
/// against `b`'s Cholesky factor.
pub fn gaussian_kl(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: b.dim() });
    }
    let lb = b.cov_factor();
    let trace_term = lb
        .solve_lower_triangular(a.cov_factor())
        .ok_or(Error::NotPositiveDefinite { attempts: 0 })?
        .norm_squared();
    let diff = b.mean() - a.mean();
    let maha = lb
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite { attempts: 0 })?
        .norm_squared();
    let kl = 0.5 * (trace_term + maha - d as f64 + b.log_det_cov() - a.log_det_cov());
    Ok(kl.max(0.0))
}

/// `KL(q ‖ p) = log Z - ELBO` when the target's normalizer is known.
pub fn exact_kl(elbo: f64, target: &dyn TargetDensity) -> Option<f64> {
    target.log_normalizer().map(|log_z| log_z - elbo)
}
