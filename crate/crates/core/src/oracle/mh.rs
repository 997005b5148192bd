use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Diagnostics, ReferencePosterior, ReferenceSource};
use crate::error::{Error, Result};
use crate::rng;
use crate::targets::TargetDensity;

pub const TARGET_ACCEPTANCE: f64 = 0.25;
pub const ACCEPTANCE_RANGE: (f64, f64) = (0.05, 0.6);

const ADAPT_WINDOW: usize = 50;
const BATCHES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    /// Retained draws per chain.
    pub n_samples: usize,
    pub burn_in: usize,
    /// Initial per-coordinate proposal scales; `0.1` each when absent.
    pub step_scales: Option<Vec<f64>>,
    /// Starting point; the origin when absent.
    pub initial: Option<Vec<f64>>,
    pub chains: usize,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            burn_in: 20_000,
            step_scales: None,
            initial: None,
            chains: 4,
            seed: 0,
        }
    }
}

impl MhConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_samples < 1000 {
            return Err(Error::config("mh.n_samples", "must be at least 1000"));
        }
        if self.chains == 0 {
            return Err(Error::config("mh.chains", "must be at least 1"));
        }
        if let Some(s) = &self.step_scales {
            if s.len() != dim {
                return Err(Error::config("mh.step_scales", format!("expected {dim} entries, got {}", s.len())));
            }
            if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::config("mh.step_scales", "must be positive"));
            }
        }
        if let Some(x) = &self.initial {
            if x.len() != dim {
                return Err(Error::config("mh.initial", format!("expected {dim} entries, got {}", x.len())));
            }
        }
        Ok(())
    }
}

struct Chain {
    samples: Vec<Vec<f64>>,
    accepted: usize,
}

fn run_chain(target: &dyn TargetDensity, cfg: &MhConfig, chain: usize) -> Result<Chain> {
    let d = target.dim();
    let mut rng = rng::stream(rng::derive_seed(cfg.seed, &[chain as u64]));
    let mut x = cfg.initial.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut lx = target.log_density(&x);
    if !lx.is_finite() {
        return Err(Error::InitializationFailed { attempts: 1 });
    }
    let base = cfg.step_scales.clone().unwrap_or_else(|| vec![0.1; d]);
    let mut log_global = 0.0_f64;
    let mut scales = base.clone();

    // Welford moments over the burn-in, used to shape per-coordinate scales.
    let mut count = 0.0;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];

    let mut proposal = vec![0.0; d];
    let mut step = |x: &mut Vec<f64>, lx: &mut f64, scales: &[f64], rng: &mut rng::StreamRng| -> bool {
        for k in 0..d {
            proposal[k] = x[k] + scales[k] * rng.sample::<f64, _>(StandardNormal);
        }
        let lp = target.log_density(&proposal);
        let u: f64 = rng.random();
        if lp.is_finite() && u.ln() < lp - *lx {
            x.copy_from_slice(&proposal);
            *lx = lp;
            true
        } else {
            false
        }
    };

    let mut window_accepts = 0;
    for i in 1..=cfg.burn_in {
        if step(&mut x, &mut lx, &scales, &mut rng) {
            window_accepts += 1;
        }
        count += 1.0;
        for k in 0..d {
            let delta = x[k] - mean[k];
            mean[k] += delta / count;
            m2[k] += delta * (x[k] - mean[k]);
        }
        if i % ADAPT_WINDOW == 0 {
            let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
            let window = (i / ADAPT_WINDOW) as f64;
            log_global += (rate - TARGET_ACCEPTANCE) * (1.0f64).min(10.0 / window.sqrt());
            window_accepts = 0;
            let use_spread = i >= cfg.burn_in / 4 && count > 500.0;
            for k in 0..d {
                let shape = if use_spread {
                    let sd = (m2[k] / (count - 1.0)).sqrt();
                    (2.38 / (d as f64).sqrt() * sd).max(1e-3 * base[k])
                } else {
                    base[k]
                };
                scales[k] = log_global.exp() * shape;
            }
        }
    }

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0;
    for _ in 0..cfg.n_samples {
        if step(&mut x, &mut lx, &scales, &mut rng) {
            accepted += 1;
        }
        samples.push(x.clone());
    }
    Ok(Chain { samples, accepted })
}

/// Batch-means estimate of the standard error of the mean of `values`.
pub fn batch_means_std_error(values: &[f64], batches: usize) -> f64 {
    let size = values.len() / batches;
    if size == 0 || batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Random-walk Metropolis reference posterior.
///
/// Each chain adapts its proposal scales during burn-in toward 25%
/// acceptance and then freezes them. Chains run concurrently and are merged
/// in chain order. Fails when the post-burn-in acceptance rate lies outside
/// `[0.05, 0.6]`.
pub fn mh_reference(target: &dyn TargetDensity, cfg: &MhConfig) -> Result<ReferencePosterior> {
    let d = target.dim();
    cfg.validate(d)?;
    let chains: Vec<Chain> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, c))
        .collect::<Result<_>>()?;
    let total: usize = chains.iter().map(|c| c.samples.len()).sum();
    let accepted: usize = chains.iter().map(|c| c.accepted).sum();
    let acceptance = accepted as f64 / total as f64;
    if !(ACCEPTANCE_RANGE.0..=ACCEPTANCE_RANGE.1).contains(&acceptance) {
        return Err(Error::PoorAcceptance(acceptance));
    }

    let mut mean = vec![0.0; d];
    for x in chains.iter().flat_map(|c| &c.samples) {
        for k in 0..d {
            mean[k] += x[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);

    let mut covariance = vec![vec![0.0; d]; d];
    for x in chains.iter().flat_map(|c| &c.samples) {
        for i in 0..d {
            for j in 0..d {
                covariance[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    covariance
        .iter_mut()
        .flatten()
        .for_each(|v| *v /= (total - 1) as f64);

    // Standard errors pool per-chain batch means: Var(mean) = Σ SE_c² / C².
    let pooled = |f: &dyn Fn(&[f64]) -> f64| -> f64 {
        let c = chains.len() as f64;
        let var: f64 = chains
            .iter()
            .map(|ch| {
                let vals: Vec<f64> = ch.samples.iter().map(|x| f(x)).collect();
                batch_means_std_error(&vals, BATCHES).powi(2)
            })
            .sum();
        var.sqrt() / c
    };
    let mean_std_error: Vec<f64> = (0..d).map(|k| pooled(&|x| x[k])).collect();
    let covariance_std_error: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| pooled(&|x| (x[i] - mean[i]) * (x[j] - mean[j])))
                .collect()
        })
        .collect();
    let ess: Vec<f64> = (0..d)
        .map(|k| covariance[k][k] / mean_std_error[k].powi(2))
        .collect();

    Ok(ReferencePosterior {
        source: ReferenceSource::MhSamples,
        mean,
        covariance,
        log_normalizer: None,
        diagnostics: Diagnostics {
            acceptance_rate: Some(acceptance),
            effective_sample_size: Some(ess),
            mean_std_error: Some(mean_std_error),
            covariance_std_error: Some(covariance_std_error),
            boundary_mass: None,
        },
        samples: Some(chains.into_iter().flat_map(|c| c.samples).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{Banana, FnTarget, LogisticModel, LogisticTarget};

    fn gaussian_2d() -> FnTarget {
        // mean (1, -2), covariance [[2, 0.6], [0.6, 0.5]]
        FnTarget::new(2, |x| {
            let (a, b) = (x[0] - 1.0, x[1] + 2.0);
            let det = 2.0 * 0.5 - 0.36;
            -0.5 * (0.5 * a * a - 1.2 * a * b + 2.0 * b * b) / det
        })
    }

    #[test]
    fn gaussian_mean_and_covariance() {
        let cfg = MhConfig {
            n_samples: 100_000,
            burn_in: 10_000,
            chains: 2,
            seed: 1,
            ..Default::default()
        };
        let r = mh_reference(&gaussian_2d(), &cfg).unwrap();
        let se = r.diagnostics.mean_std_error.clone().unwrap();
        assert!((r.mean[0] - 1.0).abs() < 3.0 * se[0], "{:?} {:?}", r.mean, se);
        assert!((r.mean[1] + 2.0).abs() < 3.0 * se[1], "{:?} {:?}", r.mean, se);
        let truth = [[2.0, 0.6], [0.6, 0.5]];
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                err += (r.covariance[i][j] - truth[i][j]).powi(2);
                norm += truth[i][j] * truth[i][j];
            }
        }
        assert!((err / norm).sqrt() < 0.1, "{:?}", r.covariance);
        let acc = r.diagnostics.acceptance_rate.unwrap();
        assert!(acc > 0.1 && acc < 0.45, "{acc}");
        assert_eq!(r.samples.as_ref().unwrap().len(), 200_000);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = MhConfig {
            n_samples: 2000,
            burn_in: 1000,
            chains: 3,
            seed: 2,
            ..Default::default()
        };
        let a = mh_reference(&gaussian_2d(), &cfg).unwrap();
        let b = mh_reference(&gaussian_2d(), &cfg).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn banana_first_moment() {
        let cfg = MhConfig {
            n_samples: 50_000,
            burn_in: 20_000,
            chains: 4,
            step_scales: Some(vec![1.0, 1.0]),
            initial: Some(vec![0.0, 10.0]),
            seed: 3,
        };
        let r = mh_reference(&Banana::new(0.1), &cfg).unwrap();
        let se = r.diagnostics.mean_std_error.as_ref().unwrap()[0];
        assert!(r.mean[0].abs() < 0.15_f64.max(3.0 * se), "{} ± {se}", r.mean[0]);
    }

    #[test]
    fn logistic_mean_near_laplace_mode() {
        let t = LogisticTarget::new(LogisticModel::synthetic(100, 3, 4).unwrap());
        // mode by Newton-free gradient ascent
        let mut beta = vec![0.0; 3];
        for _ in 0..5000 {
            let g = t.gradient(&beta).unwrap();
            for k in 0..3 {
                beta[k] += 0.01 * g[k];
            }
        }
        let cfg = MhConfig {
            n_samples: 50_000,
            burn_in: 10_000,
            chains: 2,
            seed: 5,
            ..Default::default()
        };
        let r = mh_reference(&t, &cfg).unwrap();
        for k in 0..3 {
            assert!((r.mean[k] - beta[k]).abs() < 0.1, "{:?} vs {:?}", r.mean, beta);
        }
    }

    #[test]
    fn poor_acceptance_is_reported() {
        let t = FnTarget::new(1, |x| if x[0].abs() < 1e-9 { 0.0 } else { f64::NEG_INFINITY });
        let cfg = MhConfig {
            n_samples: 1000,
            burn_in: 100,
            chains: 1,
            ..Default::default()
        };
        assert!(matches!(mh_reference(&t, &cfg), Err(Error::PoorAcceptance(_))));
    }

    #[test]
    fn batch_means_of_iid_values() {
        let mut r = rng::stream(9);
        let v: Vec<f64> = (0..100_000).map(|_| r.sample(StandardNormal)).collect();
        let se = batch_means_std_error(&v, 50);
        assert!((se / (1.0 / (100_000f64).sqrt()) - 1.0).abs() < 0.35, "{se}");
    }
}
