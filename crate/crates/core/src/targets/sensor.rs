use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TargetDensity;
use crate::error::{Error, Result};
use crate::rng;

/// Sensor-network localization data.
///
/// Sensors `0..anchors.len()` have known positions; the remaining ones are
/// unknown and flattened into `θ = (x, y, x, y, ...)`. `Z` records which
/// pairwise distances were observed and `Y` holds the noisy observed
/// distances (zero where unobserved). Each unknown coordinate carries a flat
/// prior on `[box[0], box[1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub anchors: Vec<[f64; 2]>,
    #[serde(rename = "Z")]
    pub observed: Vec<Vec<u8>>,
    #[serde(rename = "Y")]
    pub distances: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub range: f64,
    pub sigma: f64,
    #[serde(rename = "box")]
    pub bounds: [f64; 2],
    /// Ground-truth positions of all sensors, when the data are synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<[f64; 2]>>,
}

pub const DEFAULT_SENSOR_BOX: [f64; 2] = [-1.0, 2.0];

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

impl SensorModel {
    pub fn num_sensors(&self) -> usize {
        self.observed.len()
    }

    pub fn num_unknown(&self) -> usize {
        self.num_sensors().saturating_sub(self.anchors.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_sensors();
        let bad = |m: &str| Err(Error::Dataset(format!("sensor model: {m}")));
        if self.anchors.is_empty() || n <= self.anchors.len() {
            return bad("need at least one anchor and one unknown sensor");
        }
        if self.distances.len() != n || self.observed.iter().any(|r| r.len() != n) || self.distances.iter().any(|r| r.len() != n) {
            return bad("Z and Y must be square with one row per sensor");
        }
        if !(self.range > 0.0 && self.sigma > 0.0) {
            return bad("R and sigma must be positive");
        }
        if !(self.bounds[0] < self.bounds[1]) {
            return bad("box lower bound must be below upper bound");
        }
        if self.anchors.iter().flatten().any(|v| !v.is_finite()) {
            return bad("anchor coordinates must be finite");
        }
        for i in 0..n {
            if self.observed[i][i] != 0 {
                return bad("Z must have a zero diagonal");
            }
            for j in 0..n {
                let z = self.observed[i][j];
                if z > 1 || z != self.observed[j][i] || self.distances[i][j] != self.distances[j][i] {
                    return bad("Z must be binary and Z, Y symmetric");
                }
                if (z == 1) != (self.distances[i][j] > 0.0) {
                    return bad("Y[i][j] > 0 exactly where Z[i][j] = 1");
                }
            }
        }
        if let Some(truth) = &self.truth {
            if truth.len() != n {
                return bad("truth must list every sensor");
            }
        }
        Ok(())
    }

    /// Simulate observations for a known layout. The first `num_anchors`
    /// positions become anchors.
    pub fn simulate(layout: &[[f64; 2]], num_anchors: usize, range: f64, sigma: f64, seed: u64) -> Result<Self> {
        let n = layout.len();
        if num_anchors == 0 || num_anchors >= n {
            return Err(Error::InvalidArgument("need 1 <= anchors < sensors".into()));
        }
        let mut rng = rng::stream(seed);
        let mut observed = vec![vec![0u8; n]; n];
        let mut distances = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d2 = dist2(layout[i], layout[j]);
                let p = (-d2 / (2.0 * range * range)).exp();
                if rng.random::<f64>() < p {
                    let y = loop {
                        let y = d2.sqrt() + sigma * rng.sample::<f64, _>(StandardNormal);
                        if y > 0.0 {
                            break y;
                        }
                    };
                    observed[i][j] = 1;
                    observed[j][i] = 1;
                    distances[i][j] = y;
                    distances[j][i] = y;
                }
            }
        }
        let model = SensorModel {
            anchors: layout[..num_anchors].to_vec(),
            observed,
            distances,
            range,
            sigma,
            bounds: DEFAULT_SENSOR_BOX,
            truth: Some(layout.to_vec()),
        };
        model.validate()?;
        Ok(model)
    }

    /// Uniform layout on the unit square with three anchors. Layouts are
    /// redrawn (from seeds derived from `seed`) until every unknown sensor
    /// has at least `min_links` observed distances.
    pub fn synthetic(num_sensors: usize, range: f64, sigma: f64, min_links: usize, seed: u64) -> Result<Self> {
        if num_sensors < 4 {
            return Err(Error::InvalidArgument("need at least four sensors".into()));
        }
        for attempt in 0..10_000u64 {
            let mut rng = rng::stream(rng::derive_seed(seed, &[attempt, 0]));
            let layout: Vec<[f64; 2]> = (0..num_sensors).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
            let model = Self::simulate(&layout, 3, range, sigma, rng::derive_seed(seed, &[attempt, 1]))?;
            let connected = (3..num_sensors).all(|i| model.observed[i].iter().map(|&z| z as usize).sum::<usize>() >= min_links);
            if connected {
                return Ok(model);
            }
        }
        Err(Error::InvalidArgument("no sufficiently connected layout found".into()))
    }

    /// Read and validate a JSON observation file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Ground-truth unknown positions flattened as a parameter vector.
    pub fn truth_parameters(&self) -> Option<Vec<f64>> {
        self.truth
            .as_ref()
            .map(|t| t[self.anchors.len()..].iter().flat_map(|p| p.iter().copied()).collect())
    }
}

/// Log-posterior of the unknown sensor positions.
#[derive(Debug, Clone)]
pub struct SensorTarget {
    model: SensorModel,
}

impl SensorTarget {
    pub fn new(model: SensorModel) -> Result<Self> {
        model.validate()?;
        Ok(Self { model })
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    fn position(&self, theta: &[f64], i: usize) -> [f64; 2] {
        let a = self.model.anchors.len();
        if i < a {
            self.model.anchors[i]
        } else {
            [theta[2 * (i - a)], theta[2 * (i - a) + 1]]
        }
    }

    fn in_box(&self, theta: &[f64]) -> bool {
        let [lo, hi] = self.model.bounds;
        theta.iter().all(|v| (lo..=hi).contains(v))
    }
}

impl TargetDensity for SensorTarget {
    fn dim(&self) -> usize {
        2 * self.model.num_unknown()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.in_box(theta) {
            return f64::NEG_INFINITY;
        }
        let m = &self.model;
        let n = m.num_sensors();
        let two_r2 = 2.0 * m.range * m.range;
        let two_s2 = 2.0 * m.sigma * m.sigma;
        let mut total = 0.0;
        for i in 0..n {
            let pi = self.position(theta, i);
            for j in (i + 1)..n {
                let d2 = dist2(pi, self.position(theta, j));
                if m.observed[i][j] == 1 {
                    let resid = m.distances[i][j] - d2.sqrt();
                    total += -d2 / two_r2 - resid * resid / two_s2;
                } else {
                    // log(1 - exp(-u))
                    total += (-(-d2 / two_r2).exp_m1()).ln();
                }
            }
        }
        total
    }

    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; theta.len()];
        if !self.in_box(theta) {
            return Some(g);
        }
        let m = &self.model;
        let a = m.anchors.len();
        let n = m.num_sensors();
        let r2 = m.range * m.range;
        let s2 = m.sigma * m.sigma;
        for i in 0..n {
            let pi = self.position(theta, i);
            for j in (i + 1)..n {
                if i < a && j < a {
                    continue;
                }
                let pj = self.position(theta, j);
                let diff = [pi[0] - pj[0], pi[1] - pj[1]];
                let d2 = diff[0] * diff[0] + diff[1] * diff[1];
                // coefficient c such that ∇_{θ_i} term = c · (θ_i - θ_j)
                let c = if m.observed[i][j] == 1 {
                    let d = d2.sqrt();
                    -1.0 / r2 + (m.distances[i][j] - d) / (s2 * d)
                } else {
                    1.0 / (r2 * (d2 / (2.0 * r2)).exp_m1())
                };
                for (k, dk) in diff.iter().enumerate() {
                    if i >= a {
                        g[2 * (i - a) + k] += c * dk;
                    }
                    if j >= a {
                        g[2 * (j - a) + k] -= c * dk;
                    }
                }
            }
        }
        Some(g)
    }
}
