use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bvi::oracle::{rem, write_points_csv};
use bvi::{elbo_estimate, resume, rng, run_bvi, BoostTrace, Checkpoint, Mixture, SensorModel};
use serde::Serialize;

use crate::error::CliError;
use crate::spec::LoadedSpec;

/// Seed path for the evaluation ELBO, disjoint from every iteration stream.
const EVAL_STREAM: u64 = u64::MAX;

pub const TRACE_FILE: &str = "trace.json";
pub const MIXTURE_FILE: &str = "mixture.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const REFERENCE_FILE: &str = "reference.json";
pub const REFERENCE_SAMPLES_FILE: &str = "reference_samples.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub elbo: f64,
    pub elbo_se: f64,
    pub rem: Option<f64>,
    pub k: usize,
    pub wall_ms: Option<f64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

pub fn load_mixture(path: &Path) -> Result<Mixture, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path, expected_hash: &str) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Validation(format!("{}: no such checkpoint", path.display())));
    }
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    ckpt.verify(expected_hash)?;
    Ok(ckpt)
}

fn write_run_artifacts(dir: &Path, config_hash: String, q: Mixture, trace: BoostTrace) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join(TRACE_FILE), &trace)?;
    write_json(&dir.join(MIXTURE_FILE), &q)?;
    Checkpoint {
        config_hash,
        mixture: q,
        trace,
    }
    .save(dir.join(CHECKPOINT_FILE))
    .map_err(|e| CliError::Runtime(e.to_string()))
}

fn summarize(q: &Mixture, trace: &BoostTrace) -> String {
    let elbo = trace
        .elbo_series()
        .last()
        .map_or("n/a".to_string(), |(t, e)| format!("{e:.4} at t = {t}"));
    format!("{} components, status {:?}, ELBO {elbo}", q.len(), trace.status)
}

pub fn cmd_run(spec_path: &Path) -> Result<String, CliError> {
    let spec = LoadedSpec::load(spec_path)?;
    let target = spec.build_target()?;
    let hash = spec.fingerprint()?;
    let (q, trace) = run_bvi(target.as_ref(), &spec.spec.run)?;
    let summary = summarize(&q, &trace);
    let dir = spec.output_dir();
    write_run_artifacts(&dir, hash, q, trace)?;
    Ok(format!("{summary}; artifacts in {}", dir.display()))
}

pub fn cmd_resume(spec_path: &Path, checkpoint: Option<PathBuf>, extra: usize) -> Result<String, CliError> {
    let spec = LoadedSpec::load(spec_path)?;
    let target = spec.build_target()?;
    let hash = spec.fingerprint()?;
    let dir = spec.output_dir();
    let ckpt = load_checkpoint(&checkpoint.unwrap_or_else(|| dir.join(CHECKPOINT_FILE)), &hash)?;
    let (q, trace) = resume(ckpt.mixture, ckpt.trace, target.as_ref(), &spec.spec.run, extra)?;
    let summary = summarize(&q, &trace);
    write_run_artifacts(&dir, hash, q, trace)?;
    Ok(format!("{summary}; artifacts in {}", dir.display()))
}

pub fn cmd_eval(spec_path: &Path, mixture: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<String, CliError> {
    let spec = LoadedSpec::load(spec_path)?;
    let target = spec.build_target()?;
    let dir = spec.output_dir();
    let default_ckpt = dir.join(CHECKPOINT_FILE);
    let ckpt_path = checkpoint.or_else(|| (mixture.is_none() && default_ckpt.is_file()).then_some(default_ckpt));
    let (q, wall_ms) = match (mixture, ckpt_path) {
        (Some(m), None) => (load_mixture(&m)?, None),
        (m, Some(c)) => {
            let ckpt = load_checkpoint(&c, &spec.fingerprint()?)?;
            let wall = ckpt.trace.records.iter().map(|r| r.wall_ms).sum::<Option<f64>>();
            (m.map(|m| load_mixture(&m)).transpose()?.unwrap_or(ckpt.mixture), wall)
        }
        (None, None) => (load_mixture(&dir.join(MIXTURE_FILE))?, None),
    };
    if q.dim() != target.dim() {
        return Err(CliError::Validation(format!(
            "mixture has dimension {} but the target has dimension {}",
            q.dim(),
            target.dim()
        )));
    }
    let seed = rng::derive_seed(spec.spec.run.master_seed, &[EVAL_STREAM]);
    let elbo = elbo_estimate(&q, target.as_ref(), spec.spec.run.elbo_eval_n, seed)?;
    let rem = spec.reference(target.as_ref())?.map(|r| rem(&q, &r)).transpose()?;
    let metrics = Metrics {
        elbo: elbo.value,
        elbo_se: elbo.std_error,
        rem,
        k: q.len(),
        wall_ms,
    };
    create_dir(&dir)?;
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    Ok(format!(
        "ELBO {:.4} ± {:.4}, REM {}, k = {}",
        metrics.elbo,
        metrics.elbo_se,
        metrics.rem.map_or("n/a".to_string(), |r| format!("{r:.4}")),
        metrics.k
    ))
}

pub fn cmd_reference(spec_path: &Path) -> Result<String, CliError> {
    let spec = LoadedSpec::load(spec_path)?;
    let target = spec.build_target()?;
    let reference = spec
        .reference(target.as_ref())?
        .ok_or_else(|| CliError::Validation("the spec has no `oracle` section".into()))?;
    let dir = spec.output_dir();
    create_dir(&dir)?;
    write_json(&dir.join(REFERENCE_FILE), &reference)?;
    if reference.samples.is_some() {
        reference
            .write_samples_csv(dir.join(REFERENCE_SAMPLES_FILE))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(format!("{:?} reference written to {}", reference.source, dir.display()))
}

/// `log q` on a uniform tensor grid with `resolution` points per axis.
pub fn cmd_grid(mixture: &Path, lower: &[f64], upper: &[f64], resolution: usize, out: &Path) -> Result<String, CliError> {
    let q = load_mixture(mixture)?;
    let d = q.dim();
    if d > 2 {
        return Err(CliError::Validation(format!("grid export needs dimension 1 or 2, got {d}")));
    }
    if resolution == 0 {
        return Err(CliError::Validation("invalid value for `resolution`: must be at least 1".into()));
    }
    if lower.len() != d || upper.len() != d {
        return Err(CliError::Validation(format!("`lower` and `upper` need {d} entries")));
    }
    if lower.iter().zip(upper).any(|(a, b)| !(a <= b)) {
        return Err(CliError::Validation("`lower` must not exceed `upper`".into()));
    }
    let axis = |k: usize| -> Vec<f64> {
        if resolution == 1 {
            vec![0.5 * (lower[k] + upper[k])]
        } else {
            (0..resolution)
                .map(|i| lower[k] + (upper[k] - lower[k]) * i as f64 / (resolution - 1) as f64)
                .collect()
        }
    };
    let mut w = BufWriter::new(File::create(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?);
    let mut rows = 0;
    if d == 1 {
        writeln!(w, "x,log_q")?;
        for x in axis(0) {
            writeln!(w, "{x},{}", q.log_density(&[x])?)?;
            rows += 1;
        }
    } else {
        writeln!(w, "x,y,log_q")?;
        let (xs, ys) = (axis(0), axis(1));
        for &x in &xs {
            for &y in &ys {
                writeln!(w, "{x},{y},{}", q.log_density(&[x, y])?)?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(format!("{rows} grid rows written to {}", out.display()))
}

pub fn cmd_sample(mixture: &Path, n: usize, seed: u64, out: &Path) -> Result<String, CliError> {
    if n == 0 {
        return Err(CliError::Validation("invalid value for `n`: must be at least 1".into()));
    }
    let q = load_mixture(mixture)?;
    let points = q.sample(n, seed)?;
    let mut w = BufWriter::new(File::create(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?);
    write_points_csv(&mut w, q.dim(), points.iter().map(|p| p.as_slice())).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.flush()?;
    Ok(format!("{n} samples written to {}", out.display()))
}

pub fn cmd_gen_sensor(sensors: usize, range: f64, sigma: f64, min_links: usize, seed: u64, out: &Path) -> Result<String, CliError> {
    let model = SensorModel::synthetic(sensors, range, sigma, min_links, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(format!(
        "{} sensors ({} unknown) written to {}",
        model.num_sensors(),
        model.num_unknown(),
        out.display()
    ))
}
