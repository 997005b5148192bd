//! The boosting loop: start from one wide Gaussian and repeatedly add a
//! Laplace-matched component with an SGD-solved weight.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::elbo_estimate;
use crate::gaussmix::{GaussianComponent, Mixture};
use crate::rng;
use crate::search::{build_component, find_peak, SearchConfig};
use crate::targets::TargetDensity;
use crate::weights::{solve_alpha, SgdConfig};

/// Per-iteration stream keys: `(master_seed, t, stage)`.
const STAGE_PEAK: u64 = 0;
const STAGE_SGD: u64 = 1;
const STAGE_ELBO: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Total number of mixture iterations `T`, counting the initial
    /// Gaussian as iteration 1.
    pub iterations: usize,
    /// Mean of `q₁`; the origin when absent.
    pub init_mean: Option<Vec<f64>>,
    /// `c` in `q₁ = N(init_mean, c·I)`.
    pub init_cov_scale: f64,
    /// Full covariance of `q₁`, overriding `init_cov_scale`.
    pub init_cov: Option<Vec<Vec<f64>>>,
    pub search: SearchConfig,
    /// The `seed` field is ignored; the driver derives one per iteration.
    pub sgd: SgdConfig,
    pub elbo_eval_n: usize,
    pub master_seed: u64,
    /// New components with weight below this are logged but not added.
    pub prune_threshold: f64,
    /// Record wall-clock milliseconds per iteration. Traces are
    /// bit-reproducible only with this off.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            init_mean: None,
            init_cov_scale: 100.0,
            init_cov: None,
            search: SearchConfig::default(),
            sgd: SgdConfig::default(),
            elbo_eval_n: 1000,
            master_seed: 0,
            prune_threshold: 1e-6,
            record_timing: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if !(self.init_cov_scale > 0.0 && self.init_cov_scale.is_finite()) {
            return Err(Error::config("init_cov_scale", "must be positive"));
        }
        if let Some(m) = &self.init_mean {
            if m.len() != dim {
                return Err(Error::config("init_mean", format!("expected {dim} entries, got {}", m.len())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("init_mean", "must be finite"));
            }
        }
        if let Some(c) = &self.init_cov {
            if c.len() != dim || c.iter().any(|r| r.len() != dim) {
                return Err(Error::config("init_cov", format!("expected a {dim}x{dim} matrix")));
            }
        }
        if self.elbo_eval_n < 2 {
            return Err(Error::config("elbo_eval_n", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::config("prune_threshold", "must lie in [0, 1)"));
        }
        self.search.validate()?;
        self.sgd.validate()
    }

    /// `q₁`.
    pub fn initial_component(&self, dim: usize) -> Result<GaussianComponent> {
        self.validate(dim)?;
        let mean = DVector::from_vec(self.init_mean.clone().unwrap_or_else(|| vec![0.0; dim]));
        match &self.init_cov {
            Some(rows) => {
                let cov = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                GaussianComponent::new(mean, cov).map_err(|e| Error::config("init_cov", e.to_string()))
            }
            None => GaussianComponent::isotropic(mean, self.init_cov_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationStatus {
    /// The component entered the mixture.
    Added,
    /// The solved weight fell below the prune threshold.
    Pruned,
    /// A sub-stage failed; the mixture is unchanged.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub status: IterationStatus,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cov: Option<Vec<Vec<f64>>>,
    /// ELBO of `q_t` and its standard error.
    pub elbo: Option<f64>,
    pub elbo_se: Option<f64>,
    pub sgd_iterations: usize,
    pub sgd_converged: bool,
    pub peak_value: Option<f64>,
    pub peak_converged: bool,
    pub hessian_repaired: bool,
    /// Components in `q_t`.
    pub num_components: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    /// All requested iterations ran.
    Completed,
    /// Stopped at iteration `t` because the residual had no curvature.
    ResidualFlat { t: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostTrace {
    /// ELBO of `q₁`.
    pub initial_elbo: Option<f64>,
    pub initial_elbo_se: Option<f64>,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
}

impl BoostTrace {
    /// Index of the last iteration represented in the trace.
    pub fn last_t(&self) -> usize {
        self.records.last().map_or(1, |r| r.t)
    }

    /// `(t, ELBO)` for `t = 1, 2, …`, skipping iterations whose estimate
    /// failed.
    pub fn elbo_series(&self) -> Vec<(usize, f64)> {
        self.initial_elbo
            .map(|e| (1, e))
            .into_iter()
            .chain(self.records.iter().filter_map(|r| r.elbo.map(|e| (r.t, e))))
            .collect()
    }

    /// Rebuild `q_t` for every record from `q₁` and the recorded components
    /// and weights.
    pub fn replay(&self, q1: &Mixture) -> Result<Vec<Mixture>> {
        let mut q = q1.clone();
        let mut out = Vec::with_capacity(self.records.len());
        for r in &self.records {
            if r.status == IterationStatus::Added {
                let (Some(mean), Some(cov)) = (&r.mean, &r.cov) else {
                    return Err(Error::Checkpoint(format!("record {} has no component", r.t)));
                };
                let d = mean.len();
                let h = GaussianComponent::new(DVector::from_column_slice(mean), DMatrix::from_fn(d, d, |i, j| cov[i][j]))?;
                q = q.extend(h, r.alpha)?;
            }
            out.push(q.clone());
        }
        Ok(out)
    }

    /// Running maximum of [`BoostTrace::elbo_series`].
    pub fn running_max_elbo(&self) -> Vec<(usize, f64)> {
        let mut best = f64::NEG_INFINITY;
        self.elbo_series()
            .into_iter()
            .map(|(t, e)| {
                best = best.max(e);
                (t, best)
            })
            .collect()
    }
}

fn component_fields(c: &GaussianComponent) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = c.dim();
    (
        c.mean().iter().copied().collect(),
        (0..d).map(|i| (0..d).map(|j| c.cov()[(i, j)]).collect()).collect(),
    )
}

fn estimate_elbo(q: &Mixture, target: &dyn TargetDensity, cfg: &RunConfig, t: usize) -> Result<(f64, f64)> {
    let seed = rng::derive_seed(cfg.master_seed, &[t as u64, STAGE_ELBO]);
    let e = elbo_estimate(q, target, cfg.elbo_eval_n, seed)?;
    Ok((e.value, e.std_error))
}

enum Step {
    Record(Mixture, IterationRecord),
    Flat,
}

fn iteration(q: &Mixture, target: &dyn TargetDensity, cfg: &RunConfig, t: usize) -> Step {
    let started = Instant::now();
    let mut record = IterationRecord {
        t,
        status: IterationStatus::Skipped,
        alpha: 0.0,
        mean: None,
        cov: None,
        elbo: None,
        elbo_se: None,
        sgd_iterations: 0,
        sgd_converged: false,
        peak_value: None,
        peak_converged: false,
        hessian_repaired: false,
        num_components: q.len(),
        warnings: Vec::new(),
        wall_ms: None,
    };

    let outcome: Result<Mixture> = (|| {
        let peak = find_peak(q, target, &cfg.search, rng::derive_seed(cfg.master_seed, &[t as u64, STAGE_PEAK]))?;
        record.peak_value = Some(peak.value);
        record.peak_converged = peak.converged;
        if !peak.converged {
            record.warnings.push(format!("peak search budget exhausted (gradient norm {:.3e})", peak.gradient_norm));
        }
        let built = build_component(&peak, &cfg.search)?;
        record.hessian_repaired = built.repaired;
        if built.repaired {
            record.warnings.push("non-positive-definite Hessian repaired by eigenvalue flooring".into());
        }
        let (mean, cov) = component_fields(&built.component);
        record.mean = Some(mean);
        record.cov = Some(cov);
        let sgd = SgdConfig {
            seed: rng::derive_seed(cfg.master_seed, &[t as u64, STAGE_SGD]),
            ..cfg.sgd
        };
        let sol = solve_alpha(q, &built.component, target, &sgd)?;
        record.alpha = sol.alpha;
        record.sgd_iterations = sol.iterations;
        record.sgd_converged = sol.converged;
        if !sol.converged {
            record.warnings.push(format!("weight solver hit max_iters = {}", sgd.max_iters));
        }
        if sol.alpha < cfg.prune_threshold {
            record.status = IterationStatus::Pruned;
            return Ok(q.clone());
        }
        let next = q.extend(built.component, sol.alpha)?;
        record.status = IterationStatus::Added;
        Ok(next)
    })();

    let next = match outcome {
        Ok(next) => next,
        Err(Error::DegenerateHessian) => return Step::Flat,
        Err(e) => {
            let e = e.at_iteration(t);
            log::warn!("{e}; component skipped");
            record.status = IterationStatus::Skipped;
            record.alpha = 0.0;
            record.warnings.push(e.to_string());
            q.clone()
        }
    };
    match estimate_elbo(&next, target, cfg, t) {
        Ok((e, se)) => {
            record.elbo = Some(e);
            record.elbo_se = Some(se);
        }
        Err(e) => record.warnings.push(format!("ELBO estimate failed: {e}")),
    }
    record.num_components = next.len();
    if cfg.record_timing {
        record.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }
    log::info!(
        "t = {t}: {:?}, alpha = {:.4}, elbo = {}, k = {}",
        record.status,
        record.alpha,
        record.elbo.map_or("n/a".to_string(), |e| format!("{e:.4}")),
        record.num_components
    );
    Step::Record(next, record)
}

fn advance(mut q: Mixture, mut trace: BoostTrace, target: &dyn TargetDensity, cfg: &RunConfig, last: usize) -> (Mixture, BoostTrace) {
    let first = trace.last_t() + 1;
    for t in first..=last {
        match iteration(&q, target, cfg, t) {
            Step::Record(next, record) => {
                q = next;
                trace.records.push(record);
            }
            Step::Flat => {
                log::info!("t = {t}: residual is flat, stopping");
                trace.status = RunStatus::ResidualFlat { t };
                break;
            }
        }
    }
    (q, trace)
}

/// Run `cfg.iterations` boosting iterations on `target`.
///
/// Iteration `t` draws all of its randomness from streams keyed by
/// `(master_seed, t, stage)`. A failed sub-stage skips the component and
/// records `α = 0`; a flat residual ends the run early.
pub fn run_bvi(target: &dyn TargetDensity, cfg: &RunConfig) -> Result<(Mixture, BoostTrace)> {
    let q1 = Mixture::single(cfg.initial_component(target.dim())?);
    let (initial_elbo, initial_elbo_se) = match estimate_elbo(&q1, target, cfg, 1) {
        Ok((e, se)) => (Some(e), Some(se)),
        Err(e) => {
            log::warn!("ELBO of the initial approximation failed: {e}");
            (None, None)
        }
    };
    let trace = BoostTrace {
        initial_elbo,
        initial_elbo_se,
        records: Vec::new(),
        status: RunStatus::Completed,
    };
    Ok(advance(q1, trace, target, cfg, cfg.iterations))
}

/// Continue a run for `extra` more iterations. Numbering and seeds carry
/// on from the trace, so `run(T₁)` followed by `resume(T₂)` reproduces
/// `run(T₁ + T₂)`. A run that stopped on a flat residual is returned
/// unchanged.
pub fn resume(q: Mixture, trace: BoostTrace, target: &dyn TargetDensity, cfg: &RunConfig, extra: usize) -> Result<(Mixture, BoostTrace)> {
    cfg.validate(target.dim())?;
    check_consistency(&q, &trace, target.dim())?;
    if extra == 0 || trace.status != RunStatus::Completed {
        return Ok((q, trace));
    }
    let last = trace.last_t() + extra;
    Ok(advance(q, trace, target, cfg, last))
}

fn check_consistency(q: &Mixture, trace: &BoostTrace, dim: usize) -> Result<()> {
    if q.dim() != dim {
        return Err(Error::Checkpoint(format!("mixture has dimension {}, target {dim}", q.dim())));
    }
    let expected = trace.records.last().map_or(1, |r| r.num_components);
    if q.len() != expected {
        return Err(Error::Checkpoint(format!(
            "mixture has {} components but the trace ends with {expected}",
            q.len()
        )));
    }
    if trace.records.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Checkpoint("iteration numbers are not increasing".into()));
    }
    if trace.records.first().is_some_and(|r| r.t < 2) {
        return Err(Error::Checkpoint("first record must be iteration 2 or later".into()));
    }
    Ok(())
}

/// Hash of everything that determines a run except its length:
/// sha256 over the canonical JSON of the target description and the
/// configuration with `iterations` removed.
pub fn config_fingerprint(target: &serde_json::Value, cfg: &RunConfig) -> Result<String> {
    let mut run = serde_json::to_value(cfg)?;
    if let Some(obj) = run.as_object_mut() {
        obj.remove("iterations");
    }
    let canonical = serde_json::to_string(&serde_json::json!({ "target": target, "run": run }))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub mixture: Mixture,
    pub trace: BoostTrace,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Refuse a checkpoint written under a different configuration.
    pub fn verify(&self, expected_hash: &str) -> Result<()> {
        if self.config_hash != expected_hash {
            return Err(Error::Checkpoint(format!(
                "configuration hash {} does not match the checkpoint's {}",
                expected_hash, self.config_hash
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{quadrature_kl, Grid};
    use crate::targets::{gmm1d_four, GaussianMixtureTarget};

    fn quiet(iterations: usize) -> RunConfig {
        RunConfig {
            iterations,
            record_timing: false,
            ..Default::default()
        }
    }

    fn gaussian_1d(m: f64, var: f64) -> GaussianMixtureTarget {
        GaussianMixtureTarget::from_mixture(Mixture::single(
            GaussianComponent::isotropic(DVector::from_element(1, m), var).unwrap(),
        ))
    }

    #[test]
    fn validation_names_the_field() {
        let cfg = RunConfig {
            init_cov_scale: -1.0,
            ..Default::default()
        };
        let err = cfg.validate(1).unwrap_err();
        assert!(matches!(&err, Error::InvalidConfig { field, .. } if field == "init_cov_scale"), "{err}");
        assert!(RunConfig { iterations: 0, ..Default::default() }.validate(1).is_err());
        assert!(RunConfig { init_mean: Some(vec![0.0; 2]), ..Default::default() }.validate(1).is_err());
    }

    #[test]
    fn single_iteration_returns_initialization() {
        let f = gaussian_1d(2.0, 1.0);
        let cfg = RunConfig {
            init_cov_scale: 25.0,
            ..quiet(1)
        };
        let (q, trace) = run_bvi(&f, &cfg).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(q, Mixture::single(cfg.initial_component(1).unwrap()));
        assert!(trace.initial_elbo.is_some());
    }

    #[test]
    fn first_component_matches_closed_form() {
        // residual log f - log q₁ for f = N(m, s²), q₁ = N(0, c) peaks at
        // η = m/(1 - s²/c) with curvature 1/s² - 1/c, so Σ = 1/(2(1/s² - 1/c))
        let (m, s2, c) = (2.0, 1.5, 25.0);
        let f = gaussian_1d(m, s2);
        let cfg = RunConfig {
            init_cov_scale: c,
            ..quiet(2)
        };
        let (_, trace) = run_bvi(&f, &cfg).unwrap();
        let r = &trace.records[0];
        let eta = m / (1.0 - s2 / c);
        let var = 0.5 / (1.0 / s2 - 1.0 / c);
        assert!((r.mean.as_ref().unwrap()[0] - eta).abs() < 1e-3, "{r:?}");
        assert!((r.cov.as_ref().unwrap()[0][0] - var).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn gaussian_target_is_recovered() {
        let f = gaussian_1d(2.0, 1.5);
        let cfg = RunConfig {
            init_cov_scale: 25.0,
            ..quiet(20)
        };
        let (q, trace) = run_bvi(&f, &cfg).unwrap();
        let grid = Grid::uniform(&[-40.0], &[40.0], 16_001).unwrap();
        let kl = quadrature_kl(|x| q.log_density(x).unwrap(), &f, &grid);
        assert!(kl < 0.05, "{kl}");
        for (i, r) in trace.records.iter().enumerate() {
            assert_eq!(r.t, i + 2);
            assert!(r.num_components <= r.t);
        }
    }

    #[test]
    fn multimodal_target_is_greedily_improved() {
        let f = gmm1d_four();
        let (q, trace) = run_bvi(&f, &quiet(12)).unwrap();
        assert!(q.len() >= 3, "{trace:#?}");
        let grid = Grid::uniform(&[-60.0], &[60.0], 12_001).unwrap();
        let q1 = Mixture::single(quiet(1).initial_component(1).unwrap());
        let states = trace.replay(&q1).unwrap();
        assert_eq!(states.last(), Some(&q));
        let mut prev = quadrature_kl(|x| q1.log_density(x).unwrap(), &f, &grid);
        let start = prev;
        for (r, qt) in trace.records.iter().zip(&states) {
            assert_eq!(qt.len(), r.num_components);
            assert!((qt.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let kl = quadrature_kl(|x| qt.log_density(x).unwrap(), &f, &grid);
            assert!(kl <= prev + 0.02, "t = {}: {kl} after {prev}", r.t);
            prev = kl;
        }
        assert!(prev < start);
    }

    #[test]
    fn flat_residual_stops_early() {
        let f = gaussian_1d(0.0, 1.0);
        let cfg = RunConfig {
            init_cov_scale: 1.0,
            ..quiet(5)
        };
        let (q, trace) = run_bvi(&f, &cfg).unwrap();
        assert_eq!(trace.status, RunStatus::ResidualFlat { t: 2 });
        assert!(trace.records.is_empty());
        assert_eq!(q.len(), 1);
        let (q2, trace2) = resume(q.clone(), trace.clone(), &f, &cfg, 3).unwrap();
        assert_eq!((q2, trace2), (q, trace));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let f = gmm1d_four();
        let (q_a, t_a) = run_bvi(&f, &quiet(4)).unwrap();
        let (q_a, t_a) = resume(q_a, t_a, &f, &quiet(4), 3).unwrap();
        let (q_b, t_b) = run_bvi(&f, &quiet(7)).unwrap();
        assert_eq!(serde_json::to_string(&t_a).unwrap(), serde_json::to_string(&t_b).unwrap());
        assert_eq!(q_a, q_b);
        let (q_c, t_c) = resume(q_b.clone(), t_b.clone(), &f, &quiet(7), 0).unwrap();
        assert_eq!((q_c, t_c), (q_b, t_b));
    }

    #[test]
    fn inconsistent_checkpoint_is_refused() {
        let f = gmm1d_four();
        let (q, trace) = run_bvi(&f, &quiet(4)).unwrap();
        let q1 = Mixture::single(quiet(1).initial_component(1).unwrap());
        if q.len() != 1 {
            assert!(matches!(resume(q1, trace, &f, &quiet(4), 2), Err(Error::Checkpoint(_))));
        }
    }

    #[test]
    fn fingerprint_ignores_iterations_only() {
        let target = serde_json::json!({"kind": "gmm1d"});
        let a = config_fingerprint(&target, &quiet(5)).unwrap();
        assert_eq!(a, config_fingerprint(&target, &quiet(50)).unwrap());
        let other = RunConfig {
            master_seed: 1,
            ..quiet(5)
        };
        assert_ne!(a, config_fingerprint(&target, &other).unwrap());
        assert_ne!(a, config_fingerprint(&serde_json::json!({"kind": "banana"}), &quiet(5)).unwrap());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn checkpoint_round_trip() {
        let f = gmm1d_four();
        let cfg = quiet(3);
        let (q, trace) = run_bvi(&f, &cfg).unwrap();
        let hash = config_fingerprint(&serde_json::json!("gmm1d"), &cfg).unwrap();
        let cp = Checkpoint {
            config_hash: hash.clone(),
            mixture: q,
            trace,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        cp.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, cp);
        assert!(back.verify(&hash).is_ok());
        assert!(back.verify("stale").is_err());
    }
}
