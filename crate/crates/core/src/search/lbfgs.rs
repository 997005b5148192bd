//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Stop when `‖∇φ‖∞` falls below this.
    pub grad_tol: f64,
    /// Budget of objective evaluations.
    pub max_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-5,
            max_evals: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_STEPS: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Objective<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective<F> {
    fn eval(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self.evals += 1;
        (self.f)(x)
    }
}

struct Probe {
    t: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

/// Minimize `φ` from `x0`. `f` returns `(φ(x), ∇φ(x))`; a non-finite value
/// is treated as a failed trial step.
pub fn minimize<F>(f: F, x0: &[f64], cfg: &LbfgsConfig) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut obj = Objective { f, evals: 0 };
    let mut x = x0.to_vec();
    let (mut fx, mut g) = obj.eval(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;

    let finish = |x: Vec<f64>, value: f64, g: &[f64], evals: usize, iterations: usize, converged: bool| Minimum {
        x,
        value,
        gradient_norm: inf_norm(g),
        evaluations: evals,
        iterations,
        converged,
    };

    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, fx, &g, obj.evals, 0, false);
    }

    loop {
        if inf_norm(&g) < cfg.grad_tol {
            return finish(x, fx, &g, obj.evals, iterations, true);
        }
        if obj.evals >= cfg.max_evals {
            return finish(x, fx, &g, obj.evals, iterations, false);
        }

        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let t0 = if history.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };

        let Some(probe) = line_search(&mut obj, &x, fx, slope, &dir, t0, cfg.max_evals) else {
            // No acceptable step: restart from steepest descent once.
            if history.is_empty() {
                return finish(x, fx, &g, obj.evals, iterations, inf_norm(&g) < cfg.grad_tol);
            }
            history.clear();
            continue;
        };
        iterations += 1;

        let x_new: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + probe.t * di).collect();
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let f_old = fx;
        x = x_new;
        fx = probe.value;
        g = probe.grad;
        if (f_old - fx).abs() <= f64::EPSILON * fx.abs().max(1.0) && inf_norm(&g) >= cfg.grad_tol {
            // Stalled at machine precision.
            return finish(x, fx, &g, obj.evals, iterations, false);
        }
    }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

fn probe<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(obj: &mut Objective<F>, x: &[f64], dir: &[f64], t: f64) -> Probe {
    let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect();
    let (value, grad) = obj.eval(&xt);
    let finite = value.is_finite() && grad.iter().all(|v| v.is_finite());
    Probe {
        t,
        value: if finite { value } else { f64::INFINITY },
        slope: if finite { dot(&grad, dir) } else { f64::NAN },
        grad,
    }
}

/// Strong-Wolfe search by bracketing and bisection-safeguarded cubic zoom.
fn line_search<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Objective<F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    t0: f64,
    max_evals: usize,
) -> Option<Probe> {
    let mut lo = Probe {
        t: 0.0,
        value: f0,
        slope: slope0,
        grad: Vec::new(),
    };
    let mut t = t0;
    let mut best: Option<Probe> = None;
    for i in 0..MAX_LINE_STEPS {
        if obj.evals >= max_evals {
            break;
        }
        let p = probe(obj, x, dir, t);
        if !p.value.is_finite() {
            t = 0.5 * (lo.t + t);
            continue;
        }
        if p.value > f0 + C1 * t * slope0 || (i > 0 && p.value >= lo.value) {
            return zoom(obj, x, f0, slope0, dir, lo, p, max_evals).or(best);
        }
        if p.slope.abs() <= -C2 * slope0 {
            return Some(p);
        }
        if p.slope >= 0.0 {
            return zoom(obj, x, f0, slope0, dir, p, lo, max_evals).or(best);
        }
        let next_t = 2.0 * t;
        lo = Probe {
            t: p.t,
            value: p.value,
            slope: p.slope,
            grad: p.grad.clone(),
        };
        best = Some(p);
        t = next_t;
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn zoom<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Objective<F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    mut lo: Probe,
    mut hi: Probe,
    max_evals: usize,
) -> Option<Probe> {
    for _ in 0..MAX_LINE_STEPS {
        if obj.evals >= max_evals {
            break;
        }
        let (a, b) = (lo.t.min(hi.t), lo.t.max(hi.t));
        let mut t = cubic_min(&lo, &hi).unwrap_or(0.5 * (lo.t + hi.t));
        let margin = 0.1 * (b - a);
        if !(t > a + margin && t < b - margin) {
            t = 0.5 * (lo.t + hi.t);
        }
        if (b - a) < 1e-16 * b.max(1.0) {
            break;
        }
        let p = probe(obj, x, dir, t);
        if !p.value.is_finite() || p.value > f0 + C1 * t * slope0 || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope.abs() <= -C2 * slope0 {
                return Some(p);
            }
            if p.slope * (hi.t - lo.t) >= 0.0 {
                hi = Probe {
                    t: lo.t,
                    value: lo.value,
                    slope: lo.slope,
                    grad: lo.grad.clone(),
                };
            }
            lo = p;
        }
    }
    // Accept a sufficient-decrease point even if curvature failed.
    (lo.t > 0.0 && lo.value < f0).then_some(lo)
}

fn cubic_min(p: &Probe, q: &Probe) -> Option<f64> {
    if !(p.slope.is_finite() && q.slope.is_finite() && q.value.is_finite()) {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.t - q.t);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = disc.sqrt() * (q.t - p.t).signum();
    let t = q.t - (q.t - p.t) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (v, g)
    }

    #[test]
    fn solves_rosenbrock() {
        let m = minimize(rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default());
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn solves_ill_conditioned_quadratic() {
        let scales = [1.0, 1e2, 1e4, 1e-2];
        let f = |x: &[f64]| {
            let v = x.iter().zip(&scales).map(|(xi, s)| 0.5 * s * (xi - 1.0).powi(2)).sum();
            let g = x.iter().zip(&scales).map(|(xi, s)| s * (xi - 1.0)).collect();
            (v, g)
        };
        let cfg = LbfgsConfig {
            grad_tol: 1e-8,
            ..Default::default()
        };
        let m = minimize(f, &[0.0; 4], &cfg);
        assert!(m.converged, "{m:?}");
        assert!(m.x.iter().all(|v| (v - 1.0).abs() < 1e-6), "{m:?}");
    }

    #[test]
    fn infinite_region_is_avoided() {
        // minimum at 0.5, objective undefined for x > 1
        let f = |x: &[f64]| {
            if x[0] > 1.0 {
                (f64::INFINITY, vec![f64::NAN])
            } else {
                ((x[0] - 0.5).powi(2), vec![2.0 * (x[0] - 0.5)])
            }
        };
        let m = minimize(f, &[-30.0], &LbfgsConfig::default());
        assert!((m.x[0] - 0.5).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn budget_is_respected() {
        let cfg = LbfgsConfig {
            max_evals: 10,
            ..Default::default()
        };
        let m = minimize(rosenbrock, &[-1.2, 1.0], &cfg);
        assert!(!m.converged);
        assert!(m.evaluations <= 10);
    }
}
