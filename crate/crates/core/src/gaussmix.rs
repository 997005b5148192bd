//! Dense multivariate Gaussians and finite Gaussian mixtures.
//!
//! Covariances are kept alongside their lower Cholesky factor; every density
//! evaluation goes through triangular solves against the factor, and no
//! covariance is ever inverted explicitly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A point in parameter space.
pub type Point = DVector<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_JITTER_DOUBLINGS: usize = 10;

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum_i exp(v_i))`, stabilized by the maximum term.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Factor `a` as `L Lᵀ`; `None` unless every pivot is strictly positive.
fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = a.clone().cholesky()?.unpack();
    if (0..l.nrows()).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
        Some(l)
    } else {
        None
    }
}

/// A multivariate normal `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    log_det_factor: f64,
}

impl GaussianComponent {
    /// Build from a mean and a covariance.
    ///
    /// The covariance is symmetrized. If it does not factor, `δI` is added
    /// with `δ = 1e-9·trace/d`, doubling `δ` up to ten times before giving up.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("zero-dimensional Gaussian".into()));
        }
        check_dim(d, cov.nrows())?;
        check_dim(d, cov.ncols())?;
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian parameters".into()));
        }
        let mut cov = (&cov + cov.transpose()) * 0.5;
        if let Some(factor) = cholesky_lower(&cov) {
            return Ok(Self::assemble(mean, cov, factor));
        }
        let trace = cov.trace();
        let mut delta = if trace > 0.0 { 1e-9 * trace / d as f64 } else { 1e-9 };
        for _ in 0..=MAX_JITTER_DOUBLINGS {
            let jittered = &cov + DMatrix::identity(d, d) * delta;
            if let Some(factor) = cholesky_lower(&jittered) {
                cov = jittered;
                return Ok(Self::assemble(mean, cov, factor));
            }
            delta *= 2.0;
        }
        Err(Error::NotPositiveDefinite {
            attempts: MAX_JITTER_DOUBLINGS,
        })
    }

    /// `N(mean, variance·I)`.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "isotropic variance must be positive, got {variance}"
            )));
        }
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    /// Build from a lower-triangular factor with positive diagonal, `Σ = L Lᵀ`.
    pub fn from_factor(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        check_dim(d, factor.nrows())?;
        check_dim(d, factor.ncols())?;
        let factor = factor.lower_triangle();
        if (0..d).any(|i| !(factor[(i, i)] > 0.0 && factor[(i, i)].is_finite())) {
            return Err(Error::NotPositiveDefinite { attempts: 0 });
        }
        let cov = &factor * factor.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self::assemble(mean, cov, factor))
    }

    fn assemble(mean: DVector<f64>, cov: DMatrix<f64>, factor: DMatrix<f64>) -> Self {
        let log_det_factor = (0..factor.nrows()).map(|i| factor[(i, i)].ln()).sum();
        Self {
            mean,
            cov,
            factor,
            log_det_factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor `L` of the covariance.
    pub fn cov_factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `log |Σ|`.
    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.log_det_factor
    }

    /// Solve `L z = x - μ` into `z`.
    fn whiten(&self, x: &[f64], z: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.factor[(i, k)] * z[k];
            }
            z[i] = s / self.factor[(i, i)];
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut z = vec![0.0; d];
        self.whiten(x, &mut z);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * d as f64 * LN_2PI - self.log_det_factor - 0.5 * quad
    }

    /// `∇ log N(x | μ, Σ) = -Σ⁻¹ (x - μ)`.
    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.grad_log_density_unchecked(x))
    }

    pub(crate) fn grad_log_density_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; d];
        self.whiten(x, &mut z);
        // back-substitute Lᵀ g = z
        let mut g = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in (i + 1)..d {
                s -= self.factor[(k, i)] * g[k];
            }
            g[i] = s / self.factor[(i, i)];
        }
        g.iter_mut().for_each(|v| *v = -*v);
        g
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.mean.clone();
        for i in 0..d {
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                x[i] += self.factor[(i, k)] * zk;
            }
        }
        x
    }
}

/// A finite mixture `Σ_j w_j N(μ_j, Σ_j)` with weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MixtureFile", try_from = "MixtureFile")]
pub struct Mixture {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl Mixture {
    /// Weights must be non-negative and sum to one within `1e-9`; they are
    /// renormalized and zero-weight components are dropped.
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidWeights("a mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        Ok(Self::normalized(weights, components))
    }

    fn normalized(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Self {
        let (mut weights, components): (Vec<f64>, Vec<GaussianComponent>) = weights
            .into_iter()
            .zip(components)
            .filter(|(w, _)| *w > 0.0)
            .unzip();
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 4.0 * f64::EPSILON * weights.len() as f64 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self {
            weights,
            log_weights,
            components,
        }
    }

    pub fn single(component: GaussianComponent) -> Self {
        Self {
            weights: vec![1.0],
            log_weights: vec![0.0],
            components: vec![component],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].log_density_unchecked(x);
        }
        let terms: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&self.components)
            .map(|(lw, c)| lw + c.log_density_unchecked(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// Gradient of the mixture log-density: responsibility-weighted
    /// component gradients.
    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.grad_log_density_unchecked(x))
    }

    pub(crate) fn grad_log_density_unchecked(&self, x: &[f64]) -> Vec<f64> {
        if self.components.len() == 1 {
            return self.components[0].grad_log_density_unchecked(x);
        }
        let terms: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&self.components)
            .map(|(lw, c)| lw + c.log_density_unchecked(x))
            .collect();
        let total = log_sum_exp(&terms);
        let mut grad = vec![0.0; self.dim()];
        if !total.is_finite() {
            return grad;
        }
        for (term, c) in terms.iter().zip(&self.components) {
            let r = (term - total).exp();
            if r < 1e-300 {
                continue;
            }
            for (g, gc) in grad.iter_mut().zip(c.grad_log_density_unchecked(x)) {
                *g += r * gc;
            }
        }
        grad
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = j;
                break;
            }
        }
        self.components[pick].sample_with(rng)
    }

    /// `n ≥ 1` independent draws, reproducible for a given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let mut rng = rng::stream(seed);
        Ok((0..n).map(|_| self.sample_with(&mut rng)).collect())
    }

    /// `(1 - α) q + α h`. Components whose weight becomes zero are dropped,
    /// so `α = 0` returns `q` and `α = 1` returns `h` alone.
    pub fn extend(&self, h: GaussianComponent, alpha: f64) -> Result<Mixture> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidAlpha(alpha));
        }
        check_dim(self.dim(), h.dim())?;
        let mut weights: Vec<f64> = self.weights.iter().map(|w| (1.0 - alpha) * w).collect();
        let mut components = self.components.clone();
        weights.push(alpha);
        components.push(h);
        Ok(Self::normalized(weights, components))
    }

    /// Exact mean and covariance of the mixture.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            mean += c.mean() * *w;
        }
        let mut cov = DMatrix::zeros(d, d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let delta = c.mean() - &mean;
            cov += (c.cov() + &delta * delta.transpose()) * *w;
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        (mean, cov)
    }
}

impl From<GaussianComponent> for Mixture {
    fn from(c: GaussianComponent) -> Self {
        Mixture::single(c)
    }
}

/// On-disk form of a component: dense row-major covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFile {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// On-disk form of a mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureFile {
    pub weights: Vec<f64>,
    pub components: Vec<ComponentFile>,
}

impl From<&GaussianComponent> for ComponentFile {
    fn from(c: &GaussianComponent) -> Self {
        let d = c.dim();
        ComponentFile {
            mean: c.mean().iter().copied().collect(),
            cov: (0..d).map(|i| (0..d).map(|j| c.cov()[(i, j)]).collect()).collect(),
        }
    }
}

impl TryFrom<ComponentFile> for GaussianComponent {
    type Error = Error;

    fn try_from(f: ComponentFile) -> Result<Self> {
        let d = f.mean.len();
        if f.cov.len() != d || f.cov.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "covariance must be {d}x{d} to match the mean"
            )));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| f.cov[i][j]);
        GaussianComponent::new(DVector::from_vec(f.mean), cov)
    }
}

impl From<Mixture> for MixtureFile {
    fn from(q: Mixture) -> Self {
        MixtureFile {
            weights: q.weights.clone(),
            components: q.components.iter().map(ComponentFile::from).collect(),
        }
    }
}

impl TryFrom<MixtureFile> for Mixture {
    type Error = Error;

    fn try_from(f: MixtureFile) -> Result<Self> {
        let components = f
            .components
            .into_iter()
            .map(GaussianComponent::try_from)
            .collect::<Result<Vec<_>>>()?;
        Mixture::new(f.weights, components)
    }
}
