//! Projected stochastic gradient descent for the weight of a new mixture
//! component, with Robbins-Monro steps `b/k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{alpha_gradient_estimate, DEFAULT_PARTICLES};
use crate::gaussmix::{GaussianComponent, Mixture};
use crate::rng;
use crate::targets::TargetDensity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    /// Monte Carlo sample size per gradient estimate.
    pub n: usize,
    /// Initial step size `b`.
    pub step_size: f64,
    /// Stop once `|α_k - α_{k-1}| < tolerance`.
    pub tolerance: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_PARTICLES,
            step_size: 0.1,
            tolerance: 1e-4,
            max_iters: 10_000,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("sgd.n", "must be at least 2"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("sgd.step_size", "must be positive"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::config("sgd.tolerance", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("sgd.max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdStep {
    pub k: usize,
    pub alpha: f64,
    pub gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha: f64,
    pub iterations: usize,
    /// False when `max_iters` was reached before the update fell below the
    /// tolerance; `alpha` is then the last iterate.
    pub converged: bool,
    pub trace: Vec<SgdStep>,
}

/// The projected SGD loop with a caller-supplied gradient oracle
/// `gradient(k, α_{k-1})`.
pub fn projected_sgd<G>(cfg: &SgdConfig, mut gradient: G) -> Result<AlphaSolution>
where
    G: FnMut(usize, f64) -> Result<f64>,
{
    cfg.validate()?;
    let mut alpha = 0.0_f64;
    let mut trace = Vec::new();
    for k in 1..=cfg.max_iters {
        let g = gradient(k, alpha)?;
        if !g.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite α-gradient {g} at step {k}")));
        }
        let next = (alpha - cfg.step_size / k as f64 * g).clamp(0.0, 1.0);
        let delta = (next - alpha).abs();
        alpha = next;
        trace.push(SgdStep { k, alpha, gradient: g });
        if delta < cfg.tolerance {
            return Ok(AlphaSolution {
                alpha,
                iterations: k,
                converged: true,
                trace,
            });
        }
    }
    log::warn!("weight solver hit max_iters = {} without converging", cfg.max_iters);
    Ok(AlphaSolution {
        alpha,
        iterations: cfg.max_iters,
        converged: false,
        trace,
    })
}

/// Find the weight of `h` in `(1-α) q_prev + α h` that minimizes the
/// effective discrepancy, starting from `α = 0`. Every step draws fresh
/// samples from the stream `(cfg.seed, k)`.
pub fn solve_alpha(q_prev: &Mixture, h: &GaussianComponent, target: &dyn TargetDensity, cfg: &SgdConfig) -> Result<AlphaSolution> {
    projected_sgd(cfg, |k, alpha| {
        let seed = rng::derive_seed(cfg.seed, &[k as u64]);
        Ok(alpha_gradient_estimate(q_prev, h, alpha, target, cfg.n, seed)?.value)
    })
}
