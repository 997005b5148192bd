use rayon::prelude::*;

use super::{Diagnostics, ReferencePosterior, ReferenceSource};
use crate::error::{Error, Result};
use crate::gaussmix::log_sum_exp;
use crate::targets::TargetDensity;

/// Largest fraction of grid mass tolerated on the boundary nodes.
pub const MAX_BOUNDARY_MASS: f64 = 1e-4;

/// A tensor-product grid with trapezoid weights, at most two axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n { nodes[i + 1] - nodes[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

impl Grid {
    /// A grid from explicit, strictly increasing nodes per axis.
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "grid quadrature supports 1 or 2 dimensions, got {}",
                axes.len()
            )));
        }
        for axis in &axes {
            if axis.len() < 2 {
                return Err(Error::InvalidArgument("each grid axis needs at least 2 nodes".into()));
            }
            if axis.iter().any(|v| !v.is_finite()) || axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument("grid nodes must be finite and strictly increasing".into()));
            }
        }
        let weights = axes.iter().map(|a| trapezoid_weights(a)).collect();
        Ok(Self { axes, weights })
    }

    /// `points` equally spaced nodes per axis on `[lower, upper]`.
    pub fn uniform(lower: &[f64], upper: &[f64], points: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if points < 2 {
            return Err(Error::InvalidArgument("need at least 2 grid points per axis".into()));
        }
        let axes = lower
            .iter()
            .zip(upper)
            .map(|(&a, &b)| (0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect())
            .collect();
        Self::new(axes)
    }

    /// Nodes `c + s·sinh(u)` for `u` uniform, so that spacing is fine near
    /// `c` and grows geometrically outward; the ends land on `lower` and
    /// `upper`.
    pub fn sinh_axis(lower: f64, upper: f64, center: f64, scale: f64, points: usize) -> Vec<f64> {
        let ua = ((lower - center) / scale).asinh();
        let ub = ((upper - center) / scale).asinh();
        (0..points)
            .map(|i| {
                if i == 0 {
                    lower
                } else if i == points - 1 {
                    upper
                } else {
                    center + scale * (ua + (ub - ua) * i as f64 / (points - 1) as f64).sinh()
                }
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `idx` in row-major order together with its weight and whether
    /// it lies on the boundary.
    fn node(&self, idx: usize) -> (Vec<f64>, f64, bool) {
        match self.axes.len() {
            1 => {
                let n = self.axes[0].len();
                (vec![self.axes[0][idx]], self.weights[0][idx], idx == 0 || idx == n - 1)
            }
            _ => {
                let n1 = self.axes[1].len();
                let (i, j) = (idx / n1, idx % n1);
                let n0 = self.axes[0].len();
                (
                    vec![self.axes[0][i], self.axes[1][j]],
                    self.weights[0][i] * self.weights[1][j],
                    i == 0 || j == 0 || i == n0 - 1 || j == n1 - 1,
                )
            }
        }
    }

    /// Trapezoid rule for `∫ g`.
    pub fn integrate<G>(&self, g: G) -> f64
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let terms: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|idx| {
                let (x, w, _) = self.node(idx);
                let v = g(&x);
                if w == 0.0 || v == 0.0 { 0.0 } else { w * v }
            })
            .collect();
        terms.iter().sum()
    }

    /// `log ∫ exp(log_g)` computed with a max-shift.
    pub fn log_integrate<G>(&self, log_g: G) -> f64
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let terms: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|idx| {
                let (x, w, _) = self.node(idx);
                w.ln() + log_g(&x)
            })
            .collect();
        log_sum_exp(&terms)
    }
}

/// Normalizer, mean and covariance of a target on a grid.
///
/// Fails with [`Error::BoxTooSmall`] when more than `1e-4` of the grid mass
/// sits on boundary nodes.
pub fn quadrature_reference(target: &dyn TargetDensity, grid: &Grid) -> Result<ReferencePosterior> {
    let d = target.dim();
    if d != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: grid.dim(),
        });
    }
    let nodes: Vec<(Vec<f64>, f64, bool, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (x, w, boundary) = grid.node(idx);
            let lf = target.log_density(&x);
            (x, w, boundary, lf)
        })
        .collect();
    let log_terms: Vec<f64> = nodes.iter().map(|(_, w, _, lf)| w.ln() + lf).collect();
    let log_z = log_sum_exp(&log_terms);
    if !log_z.is_finite() {
        return Err(Error::InvalidArgument("target has no finite mass on the grid".into()));
    }
    let mut mean = vec![0.0; d];
    let mut boundary_mass = 0.0;
    let probs: Vec<f64> = log_terms.iter().map(|lt| (lt - log_z).exp()).collect();
    for ((x, _, boundary, _), p) in nodes.iter().zip(&probs) {
        for k in 0..d {
            mean[k] += p * x[k];
        }
        if *boundary {
            boundary_mass += p;
        }
    }
    if boundary_mass > MAX_BOUNDARY_MASS {
        return Err(Error::BoxTooSmall { fraction: boundary_mass });
    }
    let mut cov = vec![vec![0.0; d]; d];
    for ((x, ..), p) in nodes.iter().zip(&probs) {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += p * (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    Ok(ReferencePosterior {
        source: ReferenceSource::QuadratureGrid,
        mean,
        covariance: cov,
        log_normalizer: Some(log_z),
        diagnostics: Diagnostics {
            boundary_mass: Some(boundary_mass),
            ..Default::default()
        },
        samples: None,
    })
}

/// `∫ q (log q - log f)` on the grid, for a normalized log-density `log_q`.
pub fn quadrature_discrepancy<Q>(log_q: Q, target: &dyn TargetDensity, grid: &Grid) -> f64
where
    Q: Fn(&[f64]) -> f64 + Sync,
{
    grid.integrate(|x| {
        let lq = log_q(x);
        if lq == f64::NEG_INFINITY {
            return 0.0;
        }
        let lf = target.log_density(x);
        if lf == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        lq.exp() * (lq - lf)
    })
}

/// `KL(q ‖ p)` with `p ∝ f`, both integrals taken on the grid.
pub fn quadrature_kl<Q>(log_q: Q, target: &dyn TargetDensity, grid: &Grid) -> f64
where
    Q: Fn(&[f64]) -> f64 + Sync,
{
    let log_z = grid.log_integrate(|x| target.log_density(x));
    quadrature_discrepancy(log_q, target, grid) + log_z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{Banana, Cauchy, FnTarget};
    use std::f64::consts::PI;

    #[test]
    fn standard_gaussian_moments() {
        let t = FnTarget::new(1, |x| -0.5 * x[0] * x[0]);
        let grid = Grid::uniform(&[-10.0], &[10.0], 4001).unwrap();
        let r = quadrature_reference(&t, &grid).unwrap();
        assert!(r.mean[0].abs() < 1e-6);
        assert!((r.covariance[0][0] - 1.0).abs() < 1e-4);
        assert!((r.log_normalizer.unwrap() - 0.5 * (2.0 * PI).ln()).abs() < 1e-8);
    }

    #[test]
    fn cauchy_normalizer_on_refined_grid() {
        let axis = Grid::sinh_axis(-1e4, 1e4, 0.0, 0.5, 20_001);
        let grid = Grid::new(vec![axis]).unwrap();
        let r = quadrature_reference(&Cauchy, &grid).unwrap();
        let z = r.log_normalizer.unwrap().exp();
        assert!((z - 2.0 * PI).abs() < 1e-2, "{z}");
    }

    #[test]
    fn banana_first_moment_vanishes() {
        let t = Banana::new(0.1);
        let grid = Grid::new(vec![
            Grid::uniform(&[-60.0], &[60.0], 1201).unwrap().axes()[0].clone(),
            Grid::uniform(&[-380.0], &[20.0], 2401).unwrap().axes()[0].clone(),
        ])
        .unwrap();
        let r = quadrature_reference(&t, &grid).unwrap();
        assert!(r.mean[0].abs() < 1e-2, "{}", r.mean[0]);
        assert!((r.log_normalizer.unwrap() - t.log_normalizer().unwrap()).abs() < 1e-4);
    }

    #[test]
    fn rejects_small_box_and_high_dimension() {
        let t = FnTarget::new(1, |x| -0.5 * x[0] * x[0]);
        let grid = Grid::uniform(&[-2.0], &[2.0], 401).unwrap();
        assert!(matches!(quadrature_reference(&t, &grid), Err(Error::BoxTooSmall { .. })));
        assert!(Grid::uniform(&[0.0; 3], &[1.0; 3], 5).is_err());
    }

    #[test]
    fn kl_between_gaussians() {
        let t = FnTarget::new(1, |x| -0.5 * (x[0] / 2.0).powi(2));
        let grid = Grid::uniform(&[-20.0], &[20.0], 8001).unwrap();
        let log_q = |x: &[f64]| -0.5 * x[0] * x[0] - 0.5 * (2.0 * PI).ln();
        let kl = quadrature_kl(log_q, &t, &grid);
        assert!((kl - 0.318_147_180_559_945_3).abs() < 1e-8, "{kl}");
    }
}
