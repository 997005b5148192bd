//! Construction of a new mixture component: climb the tail-stabilized
//! log-residual `log((f + a)/(q + a))` to a peak and place a Gaussian there
//! with covariance `(λ/2) H⁻¹`.

pub mod lbfgs;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmix::{log_add_exp, GaussianComponent, Mixture};
use crate::rng;
use crate::targets::TargetDensity;
use lbfgs::{minimize, LbfgsConfig};

/// Curvature at or below which every Hessian eigenvalue would be floored.
pub const MIN_CURVATURE: f64 = 1e-6;

/// Redraws of a starting point whose objective is not finite.
pub const MAX_REDRAWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianMode {
    Dense,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Regularization weight `λ` in `Σ = (λ/2) H⁻¹`.
    pub lambda: f64,
    /// Tail stabilizer `a`; `0` uses the raw residual.
    pub stabilizer: f64,
    /// Relative finite-difference step: `fd_step·(1 + |θ_k|)` per coordinate.
    pub fd_step: f64,
    pub hessian_mode: HessianMode,
    /// Optimizer starts per round.
    pub restarts: usize,
    /// Draws from `q_prev` screened per round; the best `restarts` of them
    /// by residual value become optimizer starts.
    pub candidates: usize,
    /// Extra rounds of restarts drawn when every start ends on a flat
    /// region.
    pub max_rounds: usize,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    pub grad_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            stabilizer: (-10.0f64).exp(),
            fd_step: 1e-4,
            hessian_mode: HessianMode::Dense,
            restarts: 3,
            candidates: 100,
            max_rounds: 3,
            max_evals: 5000,
            grad_tol: 1e-5,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lambda) {
            return Err(Error::config("search.lambda", "must be positive"));
        }
        if !(self.stabilizer >= 0.0 && self.stabilizer.is_finite()) {
            return Err(Error::config("search.stabilizer", "must be non-negative"));
        }
        if !positive(self.fd_step) {
            return Err(Error::config("search.fd_step", "must be positive"));
        }
        if !positive(self.grad_tol) {
            return Err(Error::config("search.grad_tol", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("search.restarts", "must be at least 1"));
        }
        if self.max_rounds == 0 {
            return Err(Error::config("search.max_rounds", "must be at least 1"));
        }
        if self.max_evals == 0 {
            return Err(Error::config("search.max_evals", "must be at least 1"));
        }
        Ok(())
    }

    fn step(&self, x: f64) -> f64 {
        self.fd_step * (1.0 + x.abs())
    }
}

/// A local maximum of the stabilized log-residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacePeak {
    /// `η`.
    pub location: DVector<f64>,
    /// Hessian of the negative stabilized log-residual at `η`.
    pub hessian: DMatrix<f64>,
    /// Stabilized log-residual at `η`.
    pub value: f64,
    /// False when the optimizer stopped on its budget before the gradient
    /// norm fell below tolerance.
    pub converged: bool,
    pub gradient_norm: f64,
    pub evaluations: usize,
    /// Index of the winning start, counted across rounds.
    pub restart: usize,
}

impl LaplacePeak {
    /// True when the Hessian has no eigenvalue above [`MIN_CURVATURE`].
    pub fn is_degenerate(&self) -> bool {
        self.hessian.iter().any(|v| !v.is_finite()) || max_eigenvalue(&self.hessian) <= MIN_CURVATURE
    }
}

fn max_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.max()
}

/// `log(f(x) + a) - log(q(x) + a)`, in log space throughout.
pub fn stabilized_log_residual(q_prev: &Mixture, target: &dyn TargetDensity, cfg: &SearchConfig, x: &[f64]) -> f64 {
    let log_a = cfg.stabilizer.ln();
    log_add_exp(target.log_density(x), log_a) - log_add_exp(q_prev.log_density_unchecked(x), log_a)
}

struct Residual<'a> {
    q: &'a Mixture,
    target: &'a dyn TargetDensity,
    cfg: &'a SearchConfig,
    log_a: f64,
}

impl Residual<'_> {
    /// `φ = -r`, the quantity minimized.
    fn phi(&self, x: &[f64]) -> f64 {
        let lf = self.target.log_density(x);
        let lq = self.q.log_density_unchecked(x);
        log_add_exp(lq, self.log_a) - log_add_exp(lf, self.log_a)
    }

    fn phi_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let lf = self.target.log_density(x);
        let lq = self.q.log_density_unchecked(x);
        let den_f = log_add_exp(lf, self.log_a);
        let den_q = log_add_exp(lq, self.log_a);
        let value = den_q - den_f;
        if !value.is_finite() {
            return (value, vec![f64::NAN; x.len()]);
        }
        let grad = match self.target.gradient(x) {
            Some(gf) => {
                // ∇φ = σ_q ∇log q - σ_f ∇log f, σ = p/(p + a)
                let sf = (lf - den_f).exp();
                let sq = (lq - den_q).exp();
                let gq = self.q.grad_log_density_unchecked(x);
                gq.iter().zip(&gf).map(|(a, b)| sq * a - if sf > 0.0 { sf * b } else { 0.0 }).collect()
            }
            None => self.fd_gradient(x),
        };
        (value, grad)
    }

    fn fd_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        (0..x.len())
            .map(|k| {
                let h = self.cfg.step(x[k]);
                y[k] = x[k] + h;
                let up = self.phi(&y);
                y[k] = x[k] - h;
                let down = self.phi(&y);
                y[k] = x[k];
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

/// Central finite-difference Hessian of `φ` at `x` from function values,
/// with per-coordinate steps `fd_step·(1 + |x_k|)`. Dense mode uses the
/// four-point cross stencil for each off-diagonal pair and symmetrizes;
/// diagonal mode leaves off-diagonals at zero.
pub fn fd_hessian<F>(phi: F, x: &[f64], fd_step: f64, mode: HessianMode) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|v| fd_step * (1.0 + v.abs())).collect();
    let f0 = phi(x);
    let mut y = x.to_vec();
    let mut hess = DMatrix::zeros(d, d);
    for k in 0..d {
        y[k] = x[k] + h[k];
        let up = phi(&y);
        y[k] = x[k] - h[k];
        let down = phi(&y);
        y[k] = x[k];
        hess[(k, k)] = (up - 2.0 * f0 + down) / (h[k] * h[k]);
    }
    if mode == HessianMode::Dense {
        for k in 0..d {
            for l in (k + 1)..d {
                let mut corner = |sk: f64, sl: f64| {
                    y[k] = x[k] + sk * h[k];
                    y[l] = x[l] + sl * h[l];
                    let v = phi(&y);
                    y[k] = x[k];
                    y[l] = x[l];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h[k] * h[l]);
                hess[(k, l)] = v;
                hess[(l, k)] = v;
            }
        }
    }
    hess
}

struct StartResult {
    peak: LaplacePeak,
    degenerate: bool,
}

/// Screen `cfg.candidates` draws from `q_prev` by residual value and return
/// the best `cfg.restarts` of them, earlier draws winning ties.
fn screened_starts(res: &Residual<'_>, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng::stream(seed);
    let wanted = res.cfg.candidates.max(res.cfg.restarts);
    let mut scored = Vec::with_capacity(wanted);
    let mut failures = 0;
    while scored.len() < wanted {
        let x = res.q.sample_with(&mut rng);
        let v = res.phi(x.as_slice());
        if v.is_finite() {
            scored.push((v, x.as_slice().to_vec()));
        } else {
            failures += 1;
            if scored.is_empty() && failures >= MAX_REDRAWS {
                return Err(Error::InitializationFailed { attempts: failures });
            }
            if failures >= MAX_REDRAWS + wanted {
                break;
            }
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(scored.into_iter().take(res.cfg.restarts).map(|(_, x)| x).collect())
}

fn run_start(res: &Residual<'_>, x0: &[f64], index: usize) -> StartResult {
    let lcfg = LbfgsConfig {
        grad_tol: res.cfg.grad_tol,
        max_evals: res.cfg.max_evals,
        ..Default::default()
    };
    let m = minimize(|x| res.phi_and_gradient(x), x0, &lcfg);
    if !m.converged {
        log::warn!(
            "peak search start {index} stopped with gradient norm {:.3e} after {} evaluations",
            m.gradient_norm,
            m.evaluations
        );
    }
    let hessian = fd_hessian(|x| res.phi(x), &m.x, res.cfg.fd_step, res.cfg.hessian_mode);
    let peak = LaplacePeak {
        location: DVector::from_vec(m.x),
        hessian,
        value: -m.value,
        converged: m.converged,
        gradient_norm: m.gradient_norm,
        evaluations: m.evaluations,
        restart: index,
    };
    let degenerate = peak.is_degenerate();
    StartResult { peak, degenerate }
}

/// Maximize the stabilized log-residual from starts drawn from `q_prev`.
///
/// Each round draws `candidates` points from `q_prev` and runs the
/// optimizer concurrently from the `restarts` with the highest residual. Among all starts, peaks
/// with positive curvature beat flat ones, then the highest residual wins,
/// then the lowest start index. A further round is drawn only while every
/// start so far has ended on a flat region.
pub fn find_peak(q_prev: &Mixture, target: &dyn TargetDensity, cfg: &SearchConfig, seed: u64) -> Result<LaplacePeak> {
    cfg.validate()?;
    if q_prev.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: q_prev.dim(),
        });
    }
    let res = Residual {
        q: q_prev,
        target,
        cfg,
        log_a: cfg.stabilizer.ln(),
    };
    let mut best: Option<StartResult> = None;
    for round in 0..cfg.max_rounds {
        let x0s = screened_starts(&res, rng::derive_seed(seed, &[round as u64]))?;
        let starts: Vec<StartResult> = x0s
            .par_iter()
            .enumerate()
            .map(|(r, x0)| run_start(&res, x0, round * cfg.restarts + r))
            .collect();
        for s in starts {
            let better = match &best {
                None => true,
                Some(b) => (b.degenerate && !s.degenerate) || (b.degenerate == s.degenerate && s.peak.value > b.peak.value),
            };
            if better {
                best = Some(s);
            }
        }
        if best.as_ref().is_some_and(|b| !b.degenerate) {
            break;
        }
    }
    Ok(best.expect("at least one start").peak)
}

/// A new component and whether its Hessian needed eigenvalue repair.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltComponent {
    pub component: GaussianComponent,
    pub repaired: bool,
}

/// `N(η, (λ/2) H⁻¹)`.
///
/// A positive-definite `H` is inverted through its Cholesky factor.
/// Otherwise eigenvalues below `τ = max(1e-6, 1e-6·λ_max)` are raised to
/// `τ` and the repair is flagged. When no eigenvalue exceeds `1e-6` the
/// residual has no usable curvature and [`Error::DegenerateHessian`] is
/// returned; a non-finite `H` gives [`Error::NonFiniteHessian`].
pub fn build_component(peak: &LaplacePeak, cfg: &SearchConfig) -> Result<BuiltComponent> {
    let d = peak.location.len();
    if peak.hessian.nrows() != d || peak.hessian.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: peak.hessian.nrows(),
        });
    }
    if peak.location.iter().chain(peak.hessian.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteHessian);
    }
    let h = (&peak.hessian + peak.hessian.transpose()) * 0.5;
    let scale = cfg.lambda / 2.0;
    let eigen = SymmetricEigen::new(h.clone());
    let lmax = eigen.eigenvalues.max();
    if lmax <= MIN_CURVATURE {
        return Err(Error::DegenerateHessian);
    }
    let tau = MIN_CURVATURE.max(MIN_CURVATURE * lmax);
    if eigen.eigenvalues.iter().all(|&l| l >= tau) {
        if let Some(chol) = h.clone().cholesky() {
            let cov = chol.inverse() * scale;
            let component = GaussianComponent::new(peak.location.clone(), cov)?;
            return Ok(BuiltComponent {
                component,
                repaired: false,
            });
        }
    }
    let floored = eigen.eigenvalues.map(|l| l.max(tau));
    let inv = DMatrix::from_diagonal(&floored.map(|l| scale / l));
    let cov = &eigen.eigenvectors * inv * eigen.eigenvectors.transpose();
    let component = GaussianComponent::new(peak.location.clone(), cov)?;
    Ok(BuiltComponent {
        component,
        repaired: true,
    })
}
